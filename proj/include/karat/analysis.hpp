#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "karat/checkpoint.hpp"
#include "karat/dataset.hpp"
#include "karat/vit.hpp"

namespace karat::analysis {

// ---- spectra ----

struct MatrixSpectrum {
  std::size_t layer = 0, head = 0, sample = 0;
  std::vector<double> sigma;  // descending
  double reconstruction_error = 0.0;
};

/// Statistics of ln(sigma_i) across matrices, per index i.
struct IndexAggregate {
  double min = 0.0, mean = 0.0, max = 0.0;
};

struct SpectraReport {
  std::size_t tokens = 0;
  std::vector<MatrixSpectrum> pre, post;
  std::vector<IndexAggregate> pre_aggregate, post_aggregate;
  // Row-stochastic sanity of the post-activation matrices.
  double max_row_sum_error = 0.0;      // max |sum_j A_ij - 1|
  double max_ones_norm_error = 0.0;    // max | ||A 1|| - sqrt(N) |
  double max_reconstruction_error = 0.0;
};

/// SVD of every pre- and post-activation attention matrix for the given
/// layers and samples. Throws NumericError naming the matrix on SVD failure.
SpectraReport spectral_scan(const vit::VisionTransformer& model, const std::vector<Tensor>& samples,
                            const std::vector<std::size_t>& layers);

/// ln(max(sigma, 1e-300)) aggregated per index.
std::vector<IndexAggregate> aggregate_log_spectra(const std::vector<MatrixSpectrum>& spectra);

struct ScreeResult {
  std::size_t count = 0;
  bool no_elbow = false;
};

/// Elbow of the sorted spectrum. With l_i = ln(sigma_i + eps), eps = 1e-10 * sigma_1,
/// the elbow is the interior index i (1-based) maximizing l_{i-1} - 2 l_i + l_{i+1};
/// the count of significant values is i - 1. When the largest curvature is below
/// 0.5 nats, or fewer than three values are given, `no_elbow` is set and the count
/// is the length. All-zero input gives 0.
ScreeResult scree_count(std::span<const double> sigma);

inline constexpr double kScreeMinCurvature = 0.5;

void write_spectra_csv(std::ostream& out, const std::vector<MatrixSpectrum>& spectra);
void write_spectra_summary_csv(std::ostream& out, const SpectraReport& report);

// ---- weight histograms ----

/// "attention", "karat", "mlp" or "other"; empty for metadata entries.
std::string parameter_group(const std::string& name);

struct Histogram {
  std::string group;
  double range = 0.0;  // bins cover [-range, range]
  std::vector<std::size_t> counts;

  std::size_t total() const;
  double bin_lo(std::size_t i) const;
  double bin_hi(std::size_t i) const;
};

/// Counts of `values` in `bins` equal-width bins over [-range, range]; values
/// outside are clamped into the end bins. Zero falls in the centre bin when
/// `bins` is odd.
std::vector<std::size_t> histogram(std::span<const double> values, std::size_t bins, double range);

/// One histogram per non-empty group over a common symmetric range; range 0
/// selects the largest magnitude present (or 1 when all weights are zero).
std::vector<Histogram> weight_histogram(const std::vector<NamedTensor>& entries, std::size_t bins,
                                        double range = 0.0);

void write_histogram_csv(std::ostream& out, const std::vector<Histogram>& histograms);

// ---- loss landscape ----

struct LandscapeOptions {
  std::size_t resolution = 41;
  double extent = 1.0;  // grid spans [-extent, extent] in each direction unit
  bool filter_normalize = false;
};

struct LandscapeGrid {
  std::vector<double> dir1, dir2;  // orthonormal principal directions
  double scale1 = 1.0, scale2 = 1.0;
  std::vector<double> coords;      // grid coordinates along either axis
  std::vector<double> loss;        // resolution^2 values, beta-major
  double anchor_loss = 0.0;
  std::vector<double> singular_values;  // of the delta matrix
  std::vector<std::pair<double, double>> trajectory;  // checkpoint coordinates

  double at(std::size_t ia, std::size_t ib) const { return loss[ib * coords.size() + ia]; }
};

/// Must be safe to call concurrently.
using LossFn = std::function<double(std::span<const double> params)>;

/// PCA of the checkpoint trajectory around its last entry (the anchor) and a
/// loss grid along the top two directions. The delta matrix is not centred.
/// `segments` gives per-tensor lengths for filter normalization.
/// Throws NumericError("rank-deficient trajectory ...") when fewer than three
/// checkpoints are given or the deltas span less than two dimensions.
LandscapeGrid loss_landscape(const std::vector<std::vector<double>>& trajectory, const LossFn& loss,
                             const LandscapeOptions& options, const std::vector<std::size_t>& segments = {});

/// Loads checkpoints into copies of `prototype` and evaluates mean
/// cross-entropy on `eval`.
LandscapeGrid model_loss_landscape(const vit::VisionTransformer& prototype,
                                   const std::vector<std::filesystem::path>& checkpoints,
                                   const data::Dataset& eval, const LandscapeOptions& options);

void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid);

}  // namespace karat::analysis
