#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmm/data/dataset.hpp"
#include "cmm/model/cmm_model.hpp"

namespace cmm::train {

// Intermediate outputs for one sample: token attention per reasoning step and
// where each final projection channel found its spatial maximum.
struct TraceRecord {
  std::string question;
  std::string answer;
  std::string predicted;
  std::vector<std::string> tokens;           // one row per attended token
  std::vector<std::vector<double>> weights;  // [token][step]
  std::size_t steps = 0;
  std::size_t channels = 0;                  // K, projection kernels
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> histogram;        // [height * width], sums to K
};

// Eval mode. Rows cover the first `length` tokens when padding is masked and
// all max_len tokens otherwise.
TraceRecord export_trace(model::CmmModel<float>& model, const data::Vocab& vocab, const data::Sample& sample,
                         int cell_px);

// Index of the largest weight of each step column; ties go to the earlier token.
std::vector<std::size_t> step_maxima(const TraceRecord& trace);

// "token  step 1 ... step N", maxima suffixed with '*'.
std::string format_trace_table(const TraceRecord& trace);
// height lines of width counts.
std::string format_histogram(const TraceRecord& trace);
nlohmann::json trace_json(const TraceRecord& trace);

// Binary PPM: the input image with each pixel scaled by its histogram count
// relative to the largest count, enlarged by `scale`.
void write_overlay(const TraceRecord& trace, const data::Image& image, const std::filesystem::path& path,
                   int scale = 8);

}  // namespace cmm::train
