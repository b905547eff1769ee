#include "cmm/train/trace.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "cmm/model/ensemble.hpp"
#include "cmm/train/batch.hpp"

namespace cmm::train {

TraceRecord export_trace(model::CmmModel<float>& model, const data::Vocab& vocab, const data::Sample& sample,
                         int cell_px) {
  const model::ModelConfig& cfg = model.config();
  const std::vector<data::Sample> one{sample};
  const EncodedSplit split = encode_split(one, vocab, cfg.max_len, cell_px);
  check_compatible(split, cfg);
  const model::Batch batch = make_batch(split, 0, 1);

  const bool was_training = model.training();
  model.set_training(false);
  Tape<float> tape(GradMode::disabled);
  const auto out = model.forward(tape, batch);
  model.set_training(was_training);

  TraceRecord t;
  t.question = sample.question_text;
  t.answer = sample.answer;
  t.predicted = vocab.answer(model::argmax_rows(model::softmax_rows(out.logits.value()))[0]);
  t.steps = out.trace.attention.size();
  t.channels = cfg.proj_dim;
  t.height = cfg.image.height;
  t.width = cfg.image.width;

  const std::size_t rows = cfg.mask_pad ? static_cast<std::size_t>(sample.length) : cfg.max_len;
  for (std::size_t r = 0; r < rows; ++r) {
    t.tokens.push_back(vocab.word(sample.question_tokens[r]));
    std::vector<double> w;
    for (const Array<float>& a : out.trace.attention) w.push_back(a[r]);  // batch row 0
    t.weights.push_back(std::move(w));
  }
  t.histogram.assign(t.height * t.width, 0);
  for (std::size_t k = 0; k < t.channels; ++k) {
    const nn::PixelPos p = out.trace.argmax[k];
    ++t.histogram[p.row * t.width + p.col];
  }
  return t;
}

std::vector<std::size_t> step_maxima(const TraceRecord& trace) {
  std::vector<std::size_t> best(trace.steps, 0);
  for (std::size_t s = 0; s < trace.steps; ++s) {
    for (std::size_t r = 1; r < trace.weights.size(); ++r) {
      if (trace.weights[r][s] > trace.weights[best[s]][s]) best[s] = r;
    }
  }
  return best;
}

std::string format_trace_table(const TraceRecord& trace) {
  std::size_t w = 5;
  for (const auto& tok : trace.tokens) w = std::max(w, tok.size());
  std::string out = "token";
  out.resize(w, ' ');
  for (std::size_t s = 0; s < trace.steps; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "  %9s", ("step " + std::to_string(s + 1)).c_str());
    out += buf;
  }
  out += '\n';
  const auto maxima = step_maxima(trace);
  for (std::size_t r = 0; r < trace.tokens.size(); ++r) {
    std::string line = trace.tokens[r];
    line.resize(w, ' ');
    for (std::size_t s = 0; s < trace.steps; ++s) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "  %8.6f%c", trace.weights[r][s], maxima[s] == r ? '*' : ' ');
      line += buf;
    }
    while (line.back() == ' ') line.pop_back();
    out += line + '\n';
  }
  return out;
}

std::string format_histogram(const TraceRecord& trace) {
  std::size_t top = 0;
  for (std::size_t v : trace.histogram) top = std::max(top, v);
  const int w = static_cast<int>(std::to_string(top).size());
  std::string out;
  for (std::size_t r = 0; r < trace.height; ++r) {
    for (std::size_t c = 0; c < trace.width; ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s%*zu", c ? " " : "", w, trace.histogram[r * trace.width + c]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

nlohmann::json trace_json(const TraceRecord& t) {
  nlohmann::json j;
  j["question"] = t.question;
  j["answer"] = t.answer;
  j["predicted"] = t.predicted;
  j["steps"] = t.steps;
  j["channels"] = t.channels;
  j["height"] = t.height;
  j["width"] = t.width;
  j["tokens"] = t.tokens;
  j["weights"] = t.weights;
  j["maxima"] = step_maxima(t);
  j["histogram"] = t.histogram;
  return j;
}

void write_overlay(const TraceRecord& trace, const data::Image& image, const std::filesystem::path& path, int scale) {
  if (static_cast<std::size_t>(image.height) != trace.height || static_cast<std::size_t>(image.width) != trace.width) {
    throw std::invalid_argument("overlay: image and histogram sizes differ");
  }
  if (scale < 1) throw std::invalid_argument("overlay: scale must be positive");
  std::size_t top = 0;
  for (std::size_t v : trace.histogram) top = std::max(top, v);
  const int h = image.height * scale, w = image.width * scale;
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int r = y / scale, c = x / scale;
      const double weight = top ? static_cast<double>(trace.histogram[r * trace.width + c]) / static_cast<double>(top) : 0;
      for (int ch = 0; ch < 3; ++ch) {
        const float v = image.at(std::min(ch, image.channels - 1), r, c);
        bytes += static_cast<char>(static_cast<unsigned char>(std::clamp(v * weight, 0.0, 1.0) * 255.0 + 0.5));
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << bytes;
}

}  // namespace cmm::train
