#pragma once

// Self-supervised objectives on projected embeddings, with analytic gradients.
//
// All objectives work in double precision on row-major matrices. Passing a
// non-null gradient pointer fills it with dLoss/dInput of the same shape.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sonarssl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Projected embeddings of N patches x V views. Row `i * views + v` holds z_{i,v}.
struct ViewBatch {
    std::size_t n = 0;
    std::size_t views = 0;
    RowMatrix z;

    ViewBatch() = default;
    ViewBatch(std::size_t n_patches, std::size_t n_views, RowMatrix embeddings);

    std::size_t dim() const { return static_cast<std::size_t>(z.cols()); }
    /// Per-patch mean over views (N x d).
    RowMatrix view_means() const;
    void validate() const;
};

enum class StatisticMode { quadrature, closed_form };
std::string_view to_string(StatisticMode mode);
StatisticMode parse_statistic_mode(std::string_view text);

/// Gauss-Hermite rule for the standard normal weight: sum_g w_g f(t_g) ~ E[f(T)], T ~ N(0,1).
struct Quadrature {
    std::vector<double> nodes;
    std::vector<double> weights;
    // Non-negative half of the symmetric rule; weights of t > 0 are doubled.
    std::vector<double> half_nodes;
    std::vector<double> half_weights;

    static Quadrature gauss_hermite(int num_nodes);
};

inline constexpr int kDefaultQuadratureNodes = 65;
inline constexpr int kDefaultSlices = 256;

/// Epps-Pulley distance of a 1-D sample to N(0,1):
///   I(y) = integral |ecf_y(t) - exp(-t^2/2)|^2 phi(t) dt.
/// `grad`, when non-empty, receives dI/dy (same length as y).
double epps_pulley_1d(std::span<const double> y, StatisticMode mode, const Quadrature& quad,
                      std::span<double> grad = {});
double epps_pulley_1d(std::span<const double> y, StatisticMode mode = StatisticMode::closed_form,
                      int quad_nodes = kDefaultQuadratureNodes);

/// Unit directions in R^d plus the frequency grid.
struct SliceSet {
    RowMatrix directions; // M x d
    Quadrature quadrature;
    std::uint64_t seed = 0;

    /// Gaussian draws normalized onto the sphere, deterministic in `seed`.
    static SliceSet sample(std::size_t dim, std::size_t num_slices, std::uint64_t seed,
                           int quad_nodes = kDefaultQuadratureNodes);
    std::size_t num_slices() const { return static_cast<std::size_t>(directions.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(directions.cols()); }
    void validate() const;
};

/// Seed of the slice set used at a given optimization step.
std::uint64_t slice_seed_for_step(std::uint64_t run_seed, std::uint64_t step);

/// L_inv = 1/(NV) sum_i sum_v ||z_{i,v} - zbar_i||^2.
double invariance_loss(const ViewBatch& batch, RowMatrix* grad = nullptr);

/// Mean Epps-Pulley statistic over slices of all N*V embeddings pooled.
double sigreg_loss(const RowMatrix& embeddings, const SliceSet& slices, StatisticMode mode,
                   RowMatrix* grad = nullptr);

struct LossConfig {
    double lambda = 0.1;
    int num_slices = kDefaultSlices;
    int quad_nodes = kDefaultQuadratureNodes;
    StatisticMode mode = StatisticMode::quadrature;

    void validate() const;
    nlohmann::json to_json() const;
    static LossConfig from_json(const nlohmann::json& j);
};

struct CombinedLoss {
    double total = 0.0;
    double invariance = 0.0;
    double sigreg = 0.0;
};

/// total = (1 - lambda) * L_inv + lambda * L_sig.
CombinedLoss combined_loss(const ViewBatch& batch, const SliceSet& slices, const LossConfig& cfg,
                           RowMatrix* grad = nullptr);

struct VicregWeights {
    double invariance = 25.0;
    double variance = 25.0;
    double covariance = 1.0;
    double gamma = 1.0; // target std
    double eps = 1e-4;

    nlohmann::json to_json() const;
    static VicregWeights from_json(const nlohmann::json& j);
};

struct VicregTerms {
    double total = 0.0;
    double invariance = 0.0; // mean squared difference
    double variance = 0.0;   // mean hinge over dims, averaged over both branches
    double covariance = 0.0; // sum of squared off-diagonal covariances / d, summed over branches
};

VicregTerms vicreg_loss(const RowMatrix& a, const RowMatrix& b, const VicregWeights& w = {},
                        RowMatrix* grad_a = nullptr, RowMatrix* grad_b = nullptr);

/// NT-Xent over the 2N L2-normalized embeddings; the positive of a row is its paired view.
double simclr_loss(const RowMatrix& a, const RowMatrix& b, double temperature, RowMatrix* grad_a = nullptr,
                   RowMatrix* grad_b = nullptr);

} // namespace sonarssl
