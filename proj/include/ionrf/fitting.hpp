#pragma once

// Weighted nonlinear least squares for sums of Lorentzian lines.
//
// Each component is (center, FWHM, peak amplitude) and the spectrum shares one
// additive baseline. Internally the fit runs on scaled coordinates: centers
// relative to the data span, log FWHM, log amplitude and a baseline in units of
// the largest |signal|, so all parameters are O(1) and widths/amplitudes stay
// positive. Reported values and covariances are mapped back to physical units.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ionrf/errors.hpp"
#include "ionrf/goodness_of_fit.hpp"
#include "ionrf/spectrum.hpp"

namespace ionrf {

struct Measurement {
    double value = 0.0;
    double error = 0.0;
};

struct FitComponent {
    double center_hz = 0.0;
    double fwhm_hz = 0.0;
    double amplitude = 0.0;
    double center_error = 0.0;
    double fwhm_error = 0.0;
    double amplitude_error = 0.0;
};

struct FitOptions {
    int max_iterations = 200;
    double initial_damping = 1e-3;
    // Two centers closer than this fraction of their mean FWHM are flagged.
    double degenerate_separation = 0.25;
};

struct FitResult {
    std::vector<FitComponent> components;
    double baseline = 0.0;
    double baseline_error = 0.0;
    // Parameter order: center, fwhm, amplitude for each component, then baseline.
    Eigen::MatrixXd covariance;
    double chi_square = 0.0;
    int dof = 0;
    double q_value = 0.0;
    bool converged = false;
    int iterations = 0;
    bool degenerate_pair = false;
    // Curvature-normalized chi-square gradient at the solution.
    double gradient_norm = 0.0;

    SpectrumModel model() const {
        SpectrumModel m;
        m.baseline = baseline;
        for (const auto& c : components) m.components.push_back({c.center_hz, c.fwhm_hz, c.amplitude});
        return m;
    }
};

inline std::size_t parameter_count(std::size_t n_components) { return 3 * n_components + 1; }

inline std::vector<double> pack_parameters(const SpectrumModel& model) {
    std::vector<double> p;
    for (const auto& c : model.components) {
        p.push_back(c.center_hz);
        p.push_back(c.fwhm_hz);
        p.push_back(c.amplitude);
    }
    p.push_back(model.baseline);
    return p;
}

inline SpectrumModel unpack_parameters(std::span<const double> p) {
    detail::require(p.size() % 3 == 1, "parameter vector must hold 3 values per component plus a baseline");
    SpectrumModel model;
    for (std::size_t k = 0; k + 1 < p.size(); k += 3) model.components.push_back({p[k], p[k + 1], p[k + 2]});
    model.baseline = p.back();
    return model;
}

// d model(f) / d parameter in physical units, ordered as pack_parameters.
inline std::vector<double> lorentzian_sum_gradient(const SpectrumModel& model, double f) {
    std::vector<double> g;
    g.reserve(parameter_count(model.components.size()));
    for (const auto& c : model.components) {
        const double x = 2.0 * (f - c.center_hz) / c.fwhm_hz;
        const double d = 1.0 + x * x;
        g.push_back(4.0 * c.amplitude * x / (c.fwhm_hz * d * d));
        g.push_back(2.0 * c.amplitude * x * x / (c.fwhm_hz * d * d));
        g.push_back(1.0 / d);
    }
    g.push_back(1.0);
    return g;
}

inline std::string parameter_name(std::size_t index, std::size_t n_components) {
    if (index == 3 * n_components) return "baseline";
    static const char* const names[] = {"center", "fwhm", "amplitude"};
    return "component[" + std::to_string(index / 3) + "]." + names[index % 3];
}

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
    return m;
}

inline double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Scaling {
    double frequency_origin = 0.0;
    double frequency_scale = 1.0;
    double signal_scale = 1.0;
};

inline Eigen::VectorXd to_internal(const SpectrumModel& model, const Scaling& s) {
    const std::size_t n = model.components.size();
    Eigen::VectorXd theta(static_cast<Eigen::Index>(parameter_count(n)));
    for (std::size_t k = 0; k < n; ++k) {
        const auto& c = model.components[k];
        const auto i = static_cast<Eigen::Index>(3 * k);
        theta(i) = (c.center_hz - s.frequency_origin) / s.frequency_scale;
        theta(i + 1) = std::log(c.fwhm_hz / s.frequency_scale);
        theta(i + 2) = std::log(c.amplitude / s.signal_scale);
    }
    theta(theta.size() - 1) = model.baseline / s.signal_scale;
    return theta;
}

inline SpectrumModel to_model(const Eigen::VectorXd& theta, const Scaling& s) {
    SpectrumModel model;
    const auto n = (theta.size() - 1) / 3;
    for (Eigen::Index k = 0; k < n; ++k) {
        model.components.push_back({s.frequency_origin + s.frequency_scale * theta(3 * k),
                                    s.frequency_scale * std::exp(theta(3 * k + 1)),
                                    s.signal_scale * std::exp(theta(3 * k + 2))});
    }
    model.baseline = s.signal_scale * theta(theta.size() - 1);
    return model;
}

// d physical / d internal, diagonal.
inline Eigen::VectorXd internal_jacobian_diagonal(const SpectrumModel& model, const Scaling& s) {
    Eigen::VectorXd d(static_cast<Eigen::Index>(parameter_count(model.components.size())));
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(3 * k);
        d(i) = s.frequency_scale;
        d(i + 1) = model.components[k].fwhm_hz;
        d(i + 2) = model.components[k].amplitude;
    }
    d(d.size() - 1) = s.signal_scale;
    return d;
}

struct Linearization {
    Eigen::MatrixXd jacobian; // weighted, internal coordinates
    Eigen::VectorXd residual; // weighted
    double chi_square = 0.0;
};

inline Linearization linearize(const Spectrum& data, const Eigen::VectorXd& theta, const Scaling& s) {
    const SpectrumModel model = to_model(theta, s);
    const Eigen::VectorXd chain = internal_jacobian_diagonal(model, s);
    const auto rows = static_cast<Eigen::Index>(data.size());
    Linearization lin;
    lin.jacobian.resize(rows, theta.size());
    lin.residual.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const double f = data.frequency_hz[idx];
        const double w = 1.0 / data.sigma[idx];
        lin.residual(i) = (data.signal[idx] - model(f)) * w;
        const auto g = lorentzian_sum_gradient(model, f);
        for (Eigen::Index j = 0; j < theta.size(); ++j) lin.jacobian(i, j) = g[static_cast<std::size_t>(j)] * chain(j) * w;
    }
    lin.chi_square = lin.residual.squaredNorm();
    return lin;
}

// Norm of the chi-square gradient with each parameter measured in units of
// 1 / sqrt(curvature), so the value does not depend on parameter units.
inline double scaled_gradient_norm(const Linearization& lin) {
    const Eigen::VectorXd gradient = 2.0 * lin.jacobian.transpose() * lin.residual;
    const Eigen::VectorXd curvature = lin.jacobian.colwise().squaredNorm().transpose();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < gradient.size(); ++j) {
        if (curvature(j) > 0.0) sum += gradient(j) * gradient(j) / curvature(j);
    }
    return std::sqrt(sum);
}

inline double chi_square_at(const Spectrum& data, const Eigen::VectorXd& theta, const Scaling& s) {
    const SpectrumModel model = to_model(theta, s);
    double chi = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double r = (data.signal[i] - model(data.frequency_hz[i])) / data.sigma[i];
        chi += r * r;
    }
    return chi;
}

} // namespace detail

inline double chi_square(const Spectrum& data, const SpectrumModel& model) {
    detail::require(data.has_sigma(), "chi-square needs per-point sigmas");
    double chi = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double r = (data.signal[i] - model(data.frequency_hz[i])) / data.sigma[i];
        chi += r * r;
    }
    return chi;
}

namespace detail {

// Full width at half maximum of the bump of `excess` (height above zero)
// containing index `peak`, from linearly interpolated crossings. A side that
// runs off the grid is mirrored from the other one.
inline double half_max_width(const std::vector<double>& f, const std::vector<double>& excess, std::size_t peak,
                             double fallback) {
    const double half = 0.5 * excess[peak];
    std::optional<double> left, right;
    for (std::size_t k = peak; k > 0; --k) {
        if (excess[k - 1] <= half) {
            const double t = (excess[k] - half) / (excess[k] - excess[k - 1]);
            left = f[k] - t * (f[k] - f[k - 1]);
            break;
        }
    }
    for (std::size_t k = peak; k + 1 < f.size(); ++k) {
        if (excess[k + 1] <= half) {
            const double t = (excess[k] - half) / (excess[k] - excess[k + 1]);
            right = f[k] + t * (f[k + 1] - f[k]);
            break;
        }
    }
    if (left && right) return std::max(*right - *left, fallback);
    if (left) return std::max(2.0 * (f[peak] - *left), fallback);
    if (right) return std::max(2.0 * (*right - f[peak]), fallback);
    return std::max(f.back() - f.front(), fallback);
}

} // namespace detail

// Deterministic starting point: 5-point moving average, local maxima above
// baseline + 3 robust-noise units ranked by height, widths from the
// half-maximum crossings. Missing components go to the largest remaining
// excess of the smoothed data over the guess built so far.
inline SpectrumModel initial_guess(const Spectrum& data, std::size_t n_components) {
    data.validate();
    detail::require(data.size() >= 5, "peak detection needs at least 5 points");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return data.frequency_hz[a] < data.frequency_hz[b]; });
    std::vector<double> f(data.size()), y(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        f[i] = data.frequency_hz[order[i]];
        y[i] = data.signal[order[i]];
    }

    const std::size_t n = f.size();
    std::vector<double> smooth(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= 2 ? i - 2 : 0;
        const std::size_t hi = std::min(n - 1, i + 2);
        double sum = 0.0;
        for (std::size_t k = lo; k <= hi; ++k) sum += y[k];
        smooth[i] = sum / static_cast<double>(hi - lo + 1);
    }
    std::vector<double> deviations(n);
    for (std::size_t i = 0; i < n; ++i) deviations[i] = y[i] - smooth[i];
    const double dev_median = detail::median(deviations);
    for (double& d : deviations) d = std::abs(d - dev_median);
    const double noise = 1.4826 * detail::median(deviations);
    const double baseline = detail::quantile(smooth, 0.25);

    std::vector<double> steps;
    for (std::size_t i = 1; i < n; ++i) steps.push_back(f[i] - f[i - 1]);
    double step = detail::median(steps);
    if (!(step > 0.0)) step = (f.back() - f.front()) / static_cast<double>(n);
    if (!(step > 0.0)) step = 1.0;
    const double min_fwhm = 2.0 * step;

    std::vector<std::size_t> peaks;
    for (std::size_t i = 0; i < n; ++i) {
        const bool left = i == 0 || smooth[i] > smooth[i - 1];
        const bool right = i + 1 == n || smooth[i] >= smooth[i + 1];
        if (left && right && smooth[i] > baseline + 3.0 * noise) peaks.push_back(i);
    }
    std::stable_sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) { return smooth[a] > smooth[b]; });
    if (peaks.size() > n_components) peaks.resize(n_components);

    const double floor_amplitude =
        std::max(1e-6 * std::max(std::abs(*std::max_element(y.begin(), y.end())), 1e-300), 1e-300);
    SpectrumModel guess;
    guess.baseline = baseline;
    std::vector<double> excess(n);
    for (std::size_t i = 0; i < n; ++i) excess[i] = smooth[i] - baseline;
    for (std::size_t i : peaks) {
        guess.components.push_back({f[i], detail::half_max_width(f, excess, i, min_fwhm),
                                    std::max(excess[i], floor_amplitude)});
    }
    while (guess.components.size() < n_components) {
        for (std::size_t i = 0; i < n; ++i) excess[i] = smooth[i] - guess(f[i]);
        const auto best = static_cast<std::size_t>(std::max_element(excess.begin(), excess.end()) - excess.begin());
        const double width = excess[best] > 0.0 ? detail::half_max_width(f, excess, best, min_fwhm) : min_fwhm;
        guess.components.push_back({f[best], width, std::max(excess[best], floor_amplitude)});
    }
    std::stable_sort(guess.components.begin(), guess.components.end(),
                     [](const LorentzianLine& a, const LorentzianLine& b) { return a.center_hz < b.center_hz; });
    return guess;
}

inline FitResult fit_lorentzian_sum(const Spectrum& data, std::size_t n_components,
                                    const std::optional<SpectrumModel>& initial = std::nullopt,
                                    const FitOptions& options = {}) {
    data.validate();
    detail::require(n_components >= 1, "at least one component is required");
    detail::require(data.has_sigma(), "fitting needs per-point sigmas");
    detail::require(data.size() >= 3 * n_components + 2, "too few data points for the requested components");
    for (double s : data.sigma) detail::require(std::isfinite(s) && s > 0.0, "sigmas must be positive");

    SpectrumModel start = initial ? *initial : initial_guess(data, n_components);
    detail::require(start.components.size() == n_components, "initial guess has the wrong number of components");
    start.validate();
    for (const auto& c : start.components) detail::require(c.amplitude > 0.0, "initial amplitudes must be positive");

    detail::Scaling scaling;
    {
        const auto [lo, hi] = std::minmax_element(data.frequency_hz.begin(), data.frequency_hz.end());
        scaling.frequency_origin = 0.5 * (*lo + *hi);
        scaling.frequency_scale = *hi > *lo ? *hi - *lo : 1.0;
        double peak = 0.0;
        for (double v : data.signal) peak = std::max(peak, std::abs(v));
        scaling.signal_scale = peak > 0.0 ? peak : 1.0;
    }

    Eigen::VectorXd theta = detail::to_internal(start, scaling);
    const Eigen::Index np = theta.size();
    double damping = options.initial_damping;
    detail::Linearization lin = detail::linearize(data, theta, scaling);
    FitResult result;
    int iteration = 0;
    // The scaled gradient is bounded by 2 sqrt(chi2), so the tolerance follows sqrt(chi2).
    const auto stationary = [&] {
        return lin.chi_square == 0.0 ||
               detail::scaled_gradient_norm(lin) <= 1e-6 * std::max(1.0, std::sqrt(lin.chi_square));
    };

    for (; iteration < options.max_iterations && !stationary(); ++iteration) {
        const Eigen::MatrixXd jtj = lin.jacobian.transpose() * lin.jacobian;
        const Eigen::VectorXd jtr = lin.jacobian.transpose() * lin.residual;
        const double diag_max = jtj.diagonal().maxCoeff();

        bool accepted = false;
        while (damping < 1e16) {
            Eigen::MatrixXd a = jtj;
            for (Eigen::Index j = 0; j < np; ++j) a(j, j) += damping * std::max(jtj(j, j), 1e-15 * diag_max);
            const Eigen::VectorXd step = a.ldlt().solve(jtr);
            const Eigen::VectorXd trial = theta + step;
            const double chi = step.allFinite() ? detail::chi_square_at(data, trial, scaling)
                                                : std::numeric_limits<double>::infinity();
            if (std::isfinite(chi) && chi <= lin.chi_square) {
                theta = trial;
                lin = detail::linearize(data, theta, scaling);
                damping = std::max(damping * 0.1, 1e-12);
                accepted = true;
                break;
            }
            damping *= 10.0;
        }
        // No downhill step left at working precision.
        if (!accepted) break;
    }

    result.gradient_norm = detail::scaled_gradient_norm(lin);
    const bool converged = stationary();

    const SpectrumModel fitted = detail::to_model(theta, scaling);
    result.baseline = fitted.baseline;
    result.chi_square = lin.chi_square;
    result.dof = static_cast<int>(data.size()) - static_cast<int>(np);
    result.q_value = result.dof >= 1 ? goodness_of_fit(result.chi_square, result.dof) : 0.0;
    result.converged = converged;
    result.iterations = iteration;

    // Covariance from the Gauss-Newton Hessian, checked for rank on the
    // correlation-normalized matrix.
    const Eigen::MatrixXd jtj = lin.jacobian.transpose() * lin.jacobian;
    Eigen::VectorXd inv_norm(np);
    for (Eigen::Index j = 0; j < np; ++j) {
        if (!(jtj(j, j) > 0.0)) {
            throw RankDeficiencyError("normal equations are singular: " +
                                          parameter_name(static_cast<std::size_t>(j), n_components) +
                                          " does not affect the model",
                                      parameter_name(static_cast<std::size_t>(j), n_components));
        }
        inv_norm(j) = 1.0 / std::sqrt(jtj(j, j));
    }
    const Eigen::MatrixXd correlation = inv_norm.asDiagonal() * jtj * inv_norm.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(correlation);
    if (eig.eigenvalues()(0) < 1e-13) {
        Eigen::Index worst = 0;
        eig.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
        const auto name = parameter_name(static_cast<std::size_t>(worst), n_components);
        throw RankDeficiencyError("normal equations are singular; degenerate parameter " + name, name);
    }
    const Eigen::MatrixXd internal_cov = inv_norm.asDiagonal() *
                                         (eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                                          eig.eigenvectors().transpose()) *
                                         inv_norm.asDiagonal();
    const Eigen::VectorXd chain = detail::internal_jacobian_diagonal(fitted, scaling);
    result.covariance = chain.asDiagonal() * internal_cov * chain.asDiagonal();

    for (std::size_t k = 0; k < n_components; ++k) {
        const auto i = static_cast<Eigen::Index>(3 * k);
        const auto& c = fitted.components[k];
        result.components.push_back({c.center_hz, c.fwhm_hz, c.amplitude, std::sqrt(result.covariance(i, i)),
                                     std::sqrt(result.covariance(i + 1, i + 1)),
                                     std::sqrt(result.covariance(i + 2, i + 2))});
    }
    result.baseline_error = std::sqrt(result.covariance(np - 1, np - 1));

    for (std::size_t a = 0; a < n_components; ++a) {
        for (std::size_t b = a + 1; b < n_components; ++b) {
            const auto& ca = result.components[a];
            const auto& cb = result.components[b];
            const double mean_fwhm = 0.5 * (ca.fwhm_hz + cb.fwhm_hz);
            if (std::abs(ca.center_hz - cb.center_hz) < options.degenerate_separation * mean_fwhm) {
                result.degenerate_pair = true;
            }
        }
    }
    return result;
}

// Center differences of adjacent components (sorted by center), with errors
// including the center-center covariance.
inline std::vector<Measurement> fitted_splittings(const FitResult& fit) {
    std::vector<std::size_t> order(fit.components.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return fit.components[a].center_hz < fit.components[b].center_hz; });
    std::vector<Measurement> out;
    for (std::size_t k = 1; k < order.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(3 * order[k - 1]);
        const auto j = static_cast<Eigen::Index>(3 * order[k]);
        const double variance = fit.covariance(i, i) + fit.covariance(j, j) - 2.0 * fit.covariance(i, j);
        out.push_back({fit.components[order[k]].center_hz - fit.components[order[k - 1]].center_hz,
                       std::sqrt(std::max(variance, 0.0))});
    }
    return out;
}

// a_s / a_0 with first-order error propagation through the amplitude covariance.
inline Measurement sideband_ratio(const FitResult& fit, std::size_t carrier_index, std::size_t sideband_index) {
    if (carrier_index >= fit.components.size() || sideband_index >= fit.components.size()) {
        throw InvalidInput("component index out of range");
    }
    if (!fit.converged) throw InvalidInput("sideband ratio needs a converged fit");
    const double a0 = fit.components[carrier_index].amplitude;
    const double as = fit.components[sideband_index].amplitude;
    if (!(a0 > 0.0)) throw InvalidInput("carrier amplitude must be positive");
    const double ratio = as / a0;
    const auto i = static_cast<Eigen::Index>(3 * carrier_index + 2);
    const auto j = static_cast<Eigen::Index>(3 * sideband_index + 2);
    // gradient of as/a0 w.r.t. (a0, as)
    const double d0 = -ratio / a0;
    const double ds = 1.0 / a0;
    const double variance =
        d0 * d0 * fit.covariance(i, i) + ds * ds * fit.covariance(j, j) + 2.0 * d0 * ds * fit.covariance(i, j);
    return {ratio, std::sqrt(std::max(variance, 0.0))};
}

struct ComparisonOptions {
    // Accept the richer model when its Q reaches this level and the simpler one's does not.
    double q_threshold = 1e-3;
    FitOptions fit;
};

struct ModelFit {
    std::size_t n_components = 0;
    std::optional<FitResult> fit; // empty when the fit was rank deficient
    std::string error;

    double q_value() const { return fit ? fit->q_value : 0.0; }
};

struct ModelComparison {
    ModelFit first;
    ModelFit second;
    // Component count of the preferred model; 0 when there is no preference.
    std::size_t preferred = 0;
    std::string verdict;
};

inline ModelFit fit_for_comparison(const Spectrum& data, std::size_t n, const FitOptions& options) {
    ModelFit out;
    out.n_components = n;
    try {
        out.fit = fit_lorentzian_sum(data, n, std::nullopt, options);
    } catch (const RankDeficiencyError& e) {
        out.error = e.what();
    }
    return out;
}

inline ModelComparison compare_models(const Spectrum& data, std::size_t components_a, std::size_t components_b,
                                      const ComparisonOptions& options = {}) {
    ModelComparison out;
    out.first = fit_for_comparison(data, components_a, options.fit);
    if (components_a == components_b) {
        out.second = out.first;
        out.preferred = 0;
        out.verdict = "identical models; no preference";
        return out;
    }
    out.second = fit_for_comparison(data, components_b, options.fit);

    const bool a_simpler = components_a < components_b;
    const ModelFit& simple = a_simpler ? out.first : out.second;
    const ModelFit& rich = a_simpler ? out.second : out.first;
    const double q_simple = simple.q_value();
    const double q_rich = rich.q_value();
    const auto describe = [](const ModelFit& m) {
        return std::to_string(m.n_components) + "-component model (Q = " + format_number(m.q_value()) + ")";
    };
    if (q_rich >= options.q_threshold && q_simple < options.q_threshold) {
        out.preferred = rich.n_components;
        out.verdict = "prefer " + describe(rich) + "; reject " + describe(simple);
    } else if (q_simple >= options.q_threshold) {
        out.preferred = simple.n_components;
        out.verdict = "prefer " + describe(simple) + "; richer model not required";
    } else {
        out.preferred = simple.n_components;
        out.verdict = "neither model acceptable at Q >= " + format_number(options.q_threshold) + "; keep " +
                      describe(simple);
    }
    return out;
}

struct FoldedSidebandFit {
    double carrier_amplitude = 0.0;
    double sideband_amplitude = 0.0;
    double offset = 0.0;
    Measurement ratio;
    double chi_square = 0.0;
    int dof = 0;
    double q_value = 0.0;
};

// Weighted linear fit of folded (|Delta|) data with known line positions and
// widths: y = A0 L(D; 0) + As [L(D; nu) + L(D; -nu)] + c. The constant absorbs
// the background subtraction and the common scale cancels in As / A0.
inline FoldedSidebandFit fit_folded_sideband(const Spectrum& folded, double sideband_offset_hz, double carrier_fwhm_hz,
                                             std::optional<double> sideband_fwhm_hz = std::nullopt) {
    folded.validate();
    detail::require(folded.has_sigma(), "folded fit needs per-point sigmas");
    detail::require(folded.size() >= 4, "folded fit needs at least 4 points");
    detail::require(sideband_offset_hz > 0.0 && carrier_fwhm_hz > 0.0, "offset and width must be positive");
    const double sideband_width = sideband_fwhm_hz.value_or(carrier_fwhm_hz);
    const LorentzianLine carrier{0.0, carrier_fwhm_hz, 1.0};
    const LorentzianLine upper{sideband_offset_hz, sideband_width, 1.0};
    const LorentzianLine lower{-sideband_offset_hz, sideband_width, 1.0};

    const auto rows = static_cast<Eigen::Index>(folded.size());
    Eigen::MatrixXd design(rows, 3);
    Eigen::VectorXd y(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const double w = 1.0 / folded.sigma[idx];
        const double d = folded.frequency_hz[idx];
        design(i, 0) = carrier(d) * w;
        design(i, 1) = (upper(d) + lower(d)) * w;
        design(i, 2) = w;
        y(i) = folded.signal[idx] * w;
    }
    const Eigen::MatrixXd normal = design.transpose() * design;
    const Eigen::Vector3d inv_norm = normal.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::Matrix3d correlation = inv_norm.asDiagonal() * normal * inv_norm.asDiagonal();
    if (!inv_norm.allFinite() || Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(correlation).eigenvalues()(0) < 1e-13) {
        throw RankDeficiencyError("folded sideband fit is singular", "sideband_amplitude");
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    const Eigen::VectorXd p = ldlt.solve(design.transpose() * y);
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(3, 3));

    FoldedSidebandFit out;
    out.carrier_amplitude = p(0);
    out.sideband_amplitude = p(1);
    out.offset = p(2);
    if (!(p(0) > 0.0)) throw InvalidInput("carrier amplitude must be positive");
    const double r = p(1) / p(0);
    const double d0 = -r / p(0);
    const double ds = 1.0 / p(0);
    out.ratio = {r, std::sqrt(std::max(d0 * d0 * cov(0, 0) + ds * ds * cov(1, 1) + 2.0 * d0 * ds * cov(0, 1), 0.0))};
    out.chi_square = (y - design * p).squaredNorm();
    out.dof = static_cast<int>(rows) - 3;
    out.q_value = out.dof >= 1 ? goodness_of_fit(out.chi_square, out.dof) : 0.0;
    return out;
}

} // namespace ionrf
