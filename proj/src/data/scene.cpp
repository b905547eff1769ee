#include "cmm/data/scene.hpp"

#include <algorithm>
#include <string>

#include "cmm/tensor/random.hpp"

namespace cmm::data {

std::string_view name(ShapeKind s) {
  switch (s) {
    case ShapeKind::square: return "square";
    case ShapeKind::circle: return "circle";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

std::string_view name(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
    case Color::brown: return "brown";
    case Color::gray: return "gray";
  }
  return "?";
}

std::string_view name(Size s) { return s == Size::large ? "large" : "small"; }

namespace {

template <typename E, std::size_t N>
E parse_word(std::string_view word, const std::array<E, N>& values, const char* what) {
  for (E v : values) {
    if (name(v) == word) return v;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(word) + "'");
}

}  // namespace

ShapeKind parse_shape(std::string_view word) { return parse_word(word, kShapes, "shape"); }
Color parse_color(std::string_view word) { return parse_word(word, kColors, "color"); }
Size parse_size(std::string_view word) { return parse_word(word, kSizes, "size"); }

void validate(const SceneSpec& spec) {
  if (spec.grid_h < 1 || spec.grid_w < 1) throw std::invalid_argument("scene: grid dims must be positive");
  if (spec.min_objects < 1) throw std::invalid_argument("scene: min_objects must be at least 1");
  if (spec.max_objects < spec.min_objects) throw std::invalid_argument("scene: max_objects below min_objects");
  if (spec.max_objects > spec.grid_h * spec.grid_w) {
    throw std::invalid_argument("scene: max_objects exceeds the " + std::to_string(spec.grid_h * spec.grid_w) +
                                " grid cells");
  }
}

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  validate(spec);
  Rng rng(seed);
  Scene scene;
  scene.grid_h = spec.grid_h;
  scene.grid_w = spec.grid_w;
  scene.seed = seed;
  const int span = spec.max_objects - spec.min_objects + 1;
  const int count = spec.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
  std::vector<int> cells(static_cast<std::size_t>(spec.grid_h * spec.grid_w));
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  rng.shuffle(cells);
  cells.resize(static_cast<std::size_t>(count));
  std::sort(cells.begin(), cells.end());
  for (int cell : cells) {
    SceneObject o;
    o.row = cell / spec.grid_w;
    o.col = cell % spec.grid_w;
    o.shape = kShapes[rng.below(kShapes.size())];
    o.color = kColors[rng.below(kColors.size())];
    o.size = kSizes[rng.below(kSizes.size())];
    scene.objects.push_back(o);
  }
  return scene;
}

std::array<float, 3> color_rgb(Color c) {
  switch (c) {
    case Color::red: return {0.9f, 0.1f, 0.1f};
    case Color::green: return {0.1f, 0.8f, 0.1f};
    case Color::blue: return {0.1f, 0.2f, 0.9f};
    case Color::yellow: return {0.9f, 0.9f, 0.1f};
    case Color::brown: return {0.55f, 0.35f, 0.1f};
    case Color::gray: return {0.5f, 0.5f, 0.5f};
  }
  return {0, 0, 0};
}

bool shape_mask(ShapeKind shape, Size size, int cell_px, int r, int c) {
  int m = cell_px;
  if (size == Size::small) {
    m = cell_px - 2;
    if (r < 1 || c < 1 || r > m || c > m) return false;
    --r;
    --c;
  }
  switch (shape) {
    case ShapeKind::square: return true;
    case ShapeKind::circle: return r == m / 2 || c == m / 2;
    case ShapeKind::triangle: return c <= r;
  }
  return false;
}

Image render_scene(const Scene& scene, int cell_px) {
  if (cell_px < 3) throw std::invalid_argument("render_scene: cell size must be at least 3 pixels");
  Image img;
  img.height = scene.grid_h * cell_px;
  img.width = scene.grid_w * cell_px;
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  img.pixels.assign(3 * plane, 0.0f);
  for (const SceneObject& o : scene.objects) {
    const auto rgb = color_rgb(o.color);
    for (int r = 0; r < cell_px; ++r) {
      for (int c = 0; c < cell_px; ++c) {
        if (!shape_mask(o.shape, o.size, cell_px, r, c)) continue;
        const std::size_t at = static_cast<std::size_t>(o.row * cell_px + r) * img.width + o.col * cell_px + c;
        for (int ch = 0; ch < 3; ++ch) img.pixels[ch * plane + at] = rgb[ch];
      }
    }
  }
  return img;
}

}  // namespace cmm::data
