#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace cmm::data {

enum class ShapeKind { square, circle, triangle };
enum class Color { red, green, blue, yellow, brown, gray };
enum class Size { large, small };

inline constexpr std::array<ShapeKind, 3> kShapes{ShapeKind::square, ShapeKind::circle, ShapeKind::triangle};
inline constexpr std::array<Color, 6> kColors{Color::red, Color::green, Color::blue,
                                             Color::yellow, Color::brown, Color::gray};
inline constexpr std::array<Size, 2> kSizes{Size::large, Size::small};

std::string_view name(ShapeKind s);
std::string_view name(Color c);
std::string_view name(Size s);
// Throw std::invalid_argument on unknown words.
ShapeKind parse_shape(std::string_view word);
Color parse_color(std::string_view word);
Size parse_size(std::string_view word);

struct SceneObject {
  int row = 0;
  int col = 0;
  ShapeKind shape = ShapeKind::square;
  Color color = Color::red;
  Size size = Size::large;
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  int grid_h = 4;
  int grid_w = 4;
  std::vector<SceneObject> objects;  // row-major cell order
  std::uint64_t seed = 0;
  bool operator==(const Scene&) const = default;
};

struct SceneSpec {
  int grid_h = 4;
  int grid_w = 4;
  int min_objects = 2;
  int max_objects = 8;
  bool operator==(const SceneSpec&) const = default;
};

// Throws std::invalid_argument unless 1 <= min <= max <= grid cells.
void validate(const SceneSpec& spec);

// Object count uniform in [min, max], cells drawn without replacement,
// attributes uniform. Deterministic in `seed`.
Scene generate_scene(std::uint64_t seed, const SceneSpec& spec);

struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // [channels, height, width]
  float at(int ch, int r, int c) const { return pixels[(static_cast<std::size_t>(ch) * height + r) * width + c]; }
};

std::array<float, 3> color_rgb(Color c);

// Whether pixel (r, c) of a cell of side `cell_px` is painted. Large objects use
// the whole cell; small ones a (cell_px - 2) box inset by one pixel.
//   square: every pixel; circle: a plus of width 1 through the middle;
//   triangle: the lower-left half including the diagonal.
bool shape_mask(ShapeKind shape, Size size, int cell_px, int r, int c);

// Black background, one cell_px x cell_px block per grid cell. cell_px >= 3.
Image render_scene(const Scene& scene, int cell_px);

}  // namespace cmm::data
