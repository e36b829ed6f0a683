#include "objectives.hpp"

#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace sonarssl {

using nlohmann::json;

namespace {

void require_finite(const RowMatrix& m, const char* what) {
    require(m.allFinite(), ErrorCode::non_finite, std::string(what) + " contains non-finite values");
}

} // namespace

ViewBatch::ViewBatch(std::size_t n_patches, std::size_t n_views, RowMatrix embeddings)
    : n(n_patches), views(n_views), z(std::move(embeddings)) {
    validate();
}

void ViewBatch::validate() const {
    require_arg(n >= 1 && views >= 1, "view batch needs at least one patch and one view");
    require(static_cast<std::size_t>(z.rows()) == n * views, ErrorCode::shape_mismatch,
            "view batch has " + std::to_string(z.rows()) + " rows, expected N*V = " + std::to_string(n * views));
    require_arg(z.cols() >= 1, "embedding dimension must be >= 1");
    require_finite(z, "view batch");
}

RowMatrix ViewBatch::view_means() const {
    RowMatrix means = RowMatrix::Zero(static_cast<Eigen::Index>(n), z.cols());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t v = 0; v < views; ++v) means.row(i) += z.row(i * views + v);
        means.row(i) /= static_cast<double>(views);
    }
    return means;
}

std::string_view to_string(StatisticMode mode) {
    return mode == StatisticMode::quadrature ? "quadrature" : "closed_form";
}

StatisticMode parse_statistic_mode(std::string_view text) {
    if (text == "quadrature") return StatisticMode::quadrature;
    if (text == "closed_form") return StatisticMode::closed_form;
    throw Error(ErrorCode::invalid_argument, "unknown statistic mode '" + std::string(text) + "'");
}

Quadrature Quadrature::gauss_hermite(int num_nodes) {
    require_arg(num_nodes >= 1, "quadrature needs at least one node");
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(num_nodes, num_nodes);
    for (int k = 1; k < num_nodes; ++k) {
        jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    require(eig.info() == Eigen::Success, ErrorCode::invalid_argument, "Gauss-Hermite eigensolve failed");

    Quadrature q;
    for (int g = 0; g < num_nodes; ++g) {
        const double v0 = eig.eigenvectors()(0, g);
        q.nodes.push_back(eig.eigenvalues()(g));
        q.weights.push_back(v0 * v0);
    }
    // Symmetrize: the rule is exactly symmetric, the eigensolver only approximately.
    for (int g = 0; g < num_nodes / 2; ++g) {
        const int h = num_nodes - 1 - g;
        const double t = 0.5 * (q.nodes[h] - q.nodes[g]);
        const double w = 0.5 * (q.weights[h] + q.weights[g]);
        q.nodes[g] = -t;
        q.nodes[h] = t;
        q.weights[g] = q.weights[h] = w;
    }
    if (num_nodes % 2 == 1) q.nodes[num_nodes / 2] = 0.0;
    double total = 0.0;
    for (double w : q.weights) total += w;
    for (double& w : q.weights) w /= total;

    for (int g = num_nodes / 2; g < num_nodes; ++g) {
        q.half_nodes.push_back(q.nodes[g]);
        q.half_weights.push_back(q.nodes[g] == 0.0 ? q.weights[g] : 2.0 * q.weights[g]);
    }
    return q;
}

namespace {

double ep_closed_form(std::span<const double> y, std::span<double> grad) {
    const auto n = static_cast<double>(y.size());
    double pair = 0.0, cross = 0.0;
    const bool want_grad = !grad.empty();
    if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t j = 0; j < y.size(); ++j) {
        // Diagonal (k == j) contributes exp(0) = 1; off-diagonal pairs counted twice.
        pair += 1.0;
        for (std::size_t k = j + 1; k < y.size(); ++k) {
            const double d = y[j] - y[k];
            const double e = std::exp(-0.5 * d * d);
            pair += 2.0 * e;
            if (want_grad) {
                // d/dy_j of (2/n^2) e^{-d^2/2}
                const double gj = -2.0 * d * e / (n * n);
                grad[j] += gj;
                grad[k] -= gj;
            }
        }
        const double ej = std::exp(-0.25 * y[j] * y[j]);
        cross += ej;
        if (want_grad) grad[j] += std::numbers::sqrt2 / n * 0.5 * y[j] * ej;
    }
    return pair / (n * n) - std::numbers::sqrt2 / n * cross + 1.0 / std::sqrt(3.0);
}

double ep_quadrature(std::span<const double> y, const Quadrature& quad, std::span<double> grad) {
    const std::size_t n = y.size();
    const std::size_t k_nodes = quad.half_nodes.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const bool want_grad = !grad.empty();

    std::vector<double> cos_sum(k_nodes, 0.0), sin_sum(k_nodes, 0.0);
    std::vector<double> cs, sn;
    if (want_grad) {
        cs.resize(n * k_nodes);
        sn.resize(n * k_nodes);
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < k_nodes; ++k) {
            const double arg = quad.half_nodes[k] * y[j];
            const double c = std::cos(arg), s = std::sin(arg);
            cos_sum[k] += c;
            sin_sum[k] += s;
            if (want_grad) {
                cs[j * k_nodes + k] = c;
                sn[j * k_nodes + k] = s;
            }
        }
    }
    double value = 0.0;
    std::vector<double> a(k_nodes), b(k_nodes);
    for (std::size_t k = 0; k < k_nodes; ++k) {
        const double t = quad.half_nodes[k];
        const double re = cos_sum[k] * inv_n - std::exp(-0.5 * t * t);
        const double im = sin_sum[k] * inv_n;
        value += quad.half_weights[k] * (re * re + im * im);
        // dI/dy_j = sum_k w_k (2 t_k / n) (-re_k sin(t_k y_j) + im_k cos(t_k y_j))
        a[k] = -2.0 * quad.half_weights[k] * t * inv_n * re;
        b[k] = 2.0 * quad.half_weights[k] * t * inv_n * im;
    }
    if (want_grad) {
        for (std::size_t j = 0; j < n; ++j) {
            double g = 0.0;
            for (std::size_t k = 0; k < k_nodes; ++k) g += a[k] * sn[j * k_nodes + k] + b[k] * cs[j * k_nodes + k];
            grad[j] = g;
        }
    }
    return value;
}

} // namespace

double epps_pulley_1d(std::span<const double> y, StatisticMode mode, const Quadrature& quad, std::span<double> grad) {
    require_arg(y.size() >= 2, "Epps-Pulley statistic needs n >= 2 samples");
    require_arg(grad.empty() || grad.size() == y.size(), "gradient buffer length mismatch");
    for (double v : y) require(std::isfinite(v), ErrorCode::non_finite, "Epps-Pulley input is not finite");
    if (mode == StatisticMode::closed_form) return ep_closed_form(y, grad);
    require_arg(!quad.half_nodes.empty(), "quadrature rule is empty");
    return ep_quadrature(y, quad, grad);
}

double epps_pulley_1d(std::span<const double> y, StatisticMode mode, int quad_nodes) {
    const Quadrature quad = mode == StatisticMode::quadrature ? Quadrature::gauss_hermite(quad_nodes) : Quadrature{};
    return epps_pulley_1d(y, mode, quad);
}

SliceSet SliceSet::sample(std::size_t dim, std::size_t num_slices, std::uint64_t seed, int quad_nodes) {
    require_arg(dim >= 1 && num_slices >= 1, "slice set needs dim >= 1 and at least one slice");
    SliceSet s;
    s.seed = seed;
    s.directions.resize(static_cast<Eigen::Index>(num_slices), static_cast<Eigen::Index>(dim));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index m = 0; m < s.directions.rows(); ++m) {
        double norm = 0.0;
        do {
            for (Eigen::Index k = 0; k < s.directions.cols(); ++k) s.directions(m, k) = normal(rng);
            norm = s.directions.row(m).norm();
        } while (norm < 1e-12);
        s.directions.row(m) /= norm;
    }
    s.quadrature = Quadrature::gauss_hermite(quad_nodes);
    return s;
}

void SliceSet::validate() const {
    require_arg(directions.rows() >= 1, "slice set is empty");
    for (Eigen::Index m = 0; m < directions.rows(); ++m) {
        require_arg(std::abs(directions.row(m).norm() - 1.0) <= 1e-6, "slice direction is not unit norm");
    }
    double total = 0.0;
    for (double w : quadrature.weights) {
        require_arg(w > 0.0, "quadrature weights must be positive");
        total += w;
    }
    require_arg(quadrature.weights.empty() || std::abs(total - 1.0) < 1e-9, "quadrature weights must sum to 1");
}

std::uint64_t slice_seed_for_step(std::uint64_t run_seed, std::uint64_t step) {
    return derive_seed({run_seed, 0x511ceULL, step});
}

double invariance_loss(const ViewBatch& batch, RowMatrix* grad) {
    batch.validate();
    const RowMatrix means = batch.view_means();
    const double scale = 1.0 / static_cast<double>(batch.n * batch.views);
    double loss = 0.0;
    if (grad) grad->resize(batch.z.rows(), batch.z.cols());
    for (std::size_t i = 0; i < batch.n; ++i) {
        for (std::size_t v = 0; v < batch.views; ++v) {
            const auto row = static_cast<Eigen::Index>(i * batch.views + v);
            const auto diff = batch.z.row(row) - means.row(static_cast<Eigen::Index>(i));
            loss += diff.squaredNorm();
            // The zbar dependence cancels because deviations sum to zero per patch.
            if (grad) grad->row(row) = 2.0 * scale * diff;
        }
    }
    return loss * scale;
}

double sigreg_loss(const RowMatrix& embeddings, const SliceSet& slices, StatisticMode mode, RowMatrix* grad) {
    require(static_cast<std::size_t>(embeddings.cols()) == slices.dim(), ErrorCode::shape_mismatch,
            "slice dimension " + std::to_string(slices.dim()) + " does not match embedding dimension " +
                std::to_string(embeddings.cols()));
    require_arg(embeddings.rows() >= 2, "SIGReg needs at least two embeddings");
    require_finite(embeddings, "embeddings");

    const RowMatrix projected = embeddings * slices.directions.transpose(); // rows x M
    const Eigen::Index rows = projected.rows();
    const auto m_count = static_cast<Eigen::Index>(slices.num_slices());
    // Column-major copy so each slice is contiguous.
    const Eigen::MatrixXd proj = projected;
    Eigen::MatrixXd dproj;
    if (grad) dproj.resize(rows, m_count);

    double total = 0.0;
    std::vector<double> g(static_cast<std::size_t>(grad ? rows : 0));
    for (Eigen::Index m = 0; m < m_count; ++m) {
        std::span<const double> y(proj.col(m).data(), static_cast<std::size_t>(rows));
        total += epps_pulley_1d(y, mode, slices.quadrature, g);
        if (grad) dproj.col(m) = Eigen::Map<const Eigen::VectorXd>(g.data(), rows);
    }
    const double inv_m = 1.0 / static_cast<double>(m_count);
    if (grad) *grad = inv_m * (dproj * slices.directions);
    return total * inv_m;
}

void LossConfig::validate() const {
    require_arg(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0,1]");
    require_arg(num_slices >= 1, "num_slices must be >= 1");
    require_arg(quad_nodes >= 3, "quad_nodes must be >= 3");
}

json LossConfig::to_json() const {
    return json{{"lambda", lambda},
                {"num_slices", num_slices},
                {"quad_nodes", quad_nodes},
                {"statistic_mode", std::string(to_string(mode))}};
}

LossConfig LossConfig::from_json(const json& j) {
    LossConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.num_slices = j.value("num_slices", c.num_slices);
    c.quad_nodes = j.value("quad_nodes", c.quad_nodes);
    c.mode = parse_statistic_mode(j.value("statistic_mode", std::string(to_string(c.mode))));
    c.validate();
    return c;
}

CombinedLoss combined_loss(const ViewBatch& batch, const SliceSet& slices, const LossConfig& cfg, RowMatrix* grad) {
    cfg.validate();
    CombinedLoss out;
    RowMatrix g_inv, g_sig;
    out.invariance = invariance_loss(batch, grad ? &g_inv : nullptr);
    out.sigreg = sigreg_loss(batch.z, slices, cfg.mode, grad ? &g_sig : nullptr);
    out.total = (1.0 - cfg.lambda) * out.invariance + cfg.lambda * out.sigreg;
    if (grad) *grad = (1.0 - cfg.lambda) * g_inv + cfg.lambda * g_sig;
    return out;
}

json VicregWeights::to_json() const {
    return json{{"invariance", invariance}, {"variance", variance}, {"covariance", covariance},
                {"gamma", gamma}, {"eps", eps}};
}

VicregWeights VicregWeights::from_json(const json& j) {
    VicregWeights w;
    w.invariance = j.value("invariance", w.invariance);
    w.variance = j.value("variance", w.variance);
    w.covariance = j.value("covariance", w.covariance);
    w.gamma = j.value("gamma", w.gamma);
    w.eps = j.value("eps", w.eps);
    return w;
}

namespace {

struct BranchTerms {
    double variance = 0.0;
    double covariance = 0.0;
};

// Variance hinge and off-diagonal covariance penalty of one branch.
BranchTerms vicreg_branch(const RowMatrix& x, const VicregWeights& w, RowMatrix* grad_var, RowMatrix* grad_cov) {
    const Eigen::Index n = x.rows(), d = x.cols();
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const RowMatrix xc = x.rowwise() - mean;
    const double nm1 = static_cast<double>(n - 1);

    BranchTerms t;
    const Eigen::RowVectorXd var = xc.colwise().squaredNorm() / nm1;
    Eigen::RowVectorXd coef = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        const double sd = std::sqrt(var(k) + w.eps);
        if (w.gamma > sd) {
            t.variance += w.gamma - sd;
            // d/dx_{ik} of -(sd)/d = -(1/d) * xc_{ik} / ((n-1) sd)
            coef(k) = -1.0 / (static_cast<double>(d) * nm1 * sd);
        }
    }
    t.variance /= static_cast<double>(d);
    if (grad_var) *grad_var = xc.array().rowwise() * coef.array();

    RowMatrix cov = (xc.transpose() * xc) / nm1;
    cov.diagonal().setZero();
    t.covariance = cov.squaredNorm() / static_cast<double>(d);
    if (grad_cov) *grad_cov = (4.0 / (static_cast<double>(d) * nm1)) * (xc * cov);
    return t;
}

} // namespace

VicregTerms vicreg_loss(const RowMatrix& a, const RowMatrix& b, const VicregWeights& w, RowMatrix* grad_a,
                        RowMatrix* grad_b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::shape_mismatch,
            "VICReg branches must have matching shapes");
    require_arg(a.rows() >= 2, "VICReg needs a batch of at least 2 (variance undefined)");
    require_finite(a, "VICReg branch a");
    require_finite(b, "VICReg branch b");
    const bool want = grad_a || grad_b;

    VicregTerms t;
    const double nd = static_cast<double>(a.rows() * a.cols());
    const RowMatrix diff = a - b;
    t.invariance = diff.squaredNorm() / nd;

    RowMatrix gva, gca, gvb, gcb;
    const BranchTerms ta = vicreg_branch(a, w, want ? &gva : nullptr, want ? &gca : nullptr);
    const BranchTerms tb = vicreg_branch(b, w, want ? &gvb : nullptr, want ? &gcb : nullptr);
    t.variance = 0.5 * (ta.variance + tb.variance);
    t.covariance = ta.covariance + tb.covariance;
    t.total = w.invariance * t.invariance + w.variance * t.variance + w.covariance * t.covariance;

    if (grad_a) *grad_a = w.invariance * (2.0 / nd) * diff + w.variance * 0.5 * gva + w.covariance * gca;
    if (grad_b) *grad_b = -w.invariance * (2.0 / nd) * diff + w.variance * 0.5 * gvb + w.covariance * gcb;
    return t;
}

double simclr_loss(const RowMatrix& a, const RowMatrix& b, double temperature, RowMatrix* grad_a, RowMatrix* grad_b) {
    require_arg(temperature > 0.0, "temperature must be positive");
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::shape_mismatch,
            "SimCLR views must have matching shapes");
    require_arg(a.rows() >= 2, "SimCLR needs a batch of at least 2");
    require_finite(a, "SimCLR view a");
    require_finite(b, "SimCLR view b");

    const Eigen::Index n = a.rows(), two_n = 2 * n;
    RowMatrix z(two_n, a.cols());
    z.topRows(n) = a;
    z.bottomRows(n) = b;
    Eigen::VectorXd norms = z.rowwise().norm();
    for (Eigen::Index k = 0; k < two_n; ++k) {
        require(norms(k) > 1e-12, ErrorCode::non_finite, "SimCLR embedding has zero norm");
    }
    const RowMatrix h = z.array().colwise() / norms.array();
    RowMatrix sim = (h * h.transpose()) / temperature;

    // dL/dsim, with the self-similarity excluded from every softmax.
    RowMatrix dsim = RowMatrix::Zero(two_n, two_n);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(two_n);
    for (Eigen::Index k = 0; k < two_n; ++k) {
        const Eigen::Index pos = k < n ? k + n : k - n;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index l = 0; l < two_n; ++l) {
            if (l != k) mx = std::max(mx, sim(k, l));
        }
        double denom = 0.0;
        for (Eigen::Index l = 0; l < two_n; ++l) {
            if (l != k) denom += std::exp(sim(k, l) - mx);
        }
        loss += -(sim(k, pos) - mx - std::log(denom));
        for (Eigen::Index l = 0; l < two_n; ++l) {
            if (l != k) dsim(k, l) = inv * std::exp(sim(k, l) - mx) / denom;
        }
        dsim(k, pos) -= inv;
    }
    loss *= inv;

    if (grad_a || grad_b) {
        const RowMatrix dh = ((dsim + dsim.transpose()) * h) / temperature;
        // Back through row normalization: dz = (dh - h (h . dh)) / |z|.
        const Eigen::VectorXd proj = (h.array() * dh.array()).rowwise().sum();
        const RowMatrix dz = ((dh - (h.array().colwise() * proj.array()).matrix()).array().colwise() / norms.array()).matrix();
        if (grad_a) *grad_a = dz.topRows(n);
        if (grad_b) *grad_b = dz.bottomRows(n);
    }
    return loss;
}

} // namespace sonarssl
