#pragma once

// Independent reference implementations the tests compare the library against.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "avsr/config.hpp"
#include "avsr/model.hpp"

namespace avsr::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  ///< parameter entry with the largest error
};

/// Relative error used by every gradient comparison: |a - b| / max(|a|, |b|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central finite differences against backward() for every parameter entry of
/// a d_model=8 model with gated layers (gates opened so every path carries
/// gradient), on a random example drawn from `seed`.
GradCheckResult full_model_gradient_check(std::uint64_t seed, double h = 1e-5);

/// Edit distance by enumerating every alignment path (no dynamic programming).
std::size_t brute_force_edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

/// Every word sequence of length 0..max_len over `alphabet`.
std::vector<std::vector<std::string>> all_sequences(const std::vector<std::string>& alphabet, std::size_t max_len);

/// One printed row of the multilingual WER table: per-language WER and the
/// three printed averages.
struct PrintedRow {
  std::string model;
  // Ar, De, El, Es, Fr, It, Pt, Ru
  std::array<double, 8> wer;
  double avg_non_en, avg_hr, avg_lr;
};

/// Fully populated rows of the published clean-audio table whose printed
/// averages agree with their printed per-language values.
const std::vector<PrintedRow>& published_clean_rows();

/// Language labels in PrintedRow order and the published grouping.
const std::array<std::string, 8>& published_languages();
LanguageGroups published_groups();

/// Upper-tail probability of the chi-square distribution for 1 or 2 degrees of freedom.
double chi_square_sf(double x, int dof);

struct GoodnessOfFit {
  std::array<double, 3> frequency{};
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  bool impossible_outcome = false;  ///< a zero-probability selection was drawn
};

/// Draws `n` selections and tests them against the policy's probabilities.
GoodnessOfFit selection_goodness_of_fit(const DropoutPolicy& policy, std::size_t n, std::uint64_t seed);

/// The seven probability rows of the published dropout ablation.
const std::vector<DropoutPolicy>& published_policies();

/// Small corpus and model sizes that train in seconds.
CorpusConfig tiny_corpus_config();
ModelConfig tiny_model_dims();
RunConfig tiny_run_config(std::size_t stage1_steps = 20, std::size_t stage2_steps = 20);

}  // namespace avsr::testing
