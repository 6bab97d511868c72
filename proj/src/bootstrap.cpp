#include "cvqr/bootstrap.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "cvqr/dgp.hpp"
#include "cvqr/errors.hpp"

namespace cvqr {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + stream + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

void BootstrapConfig::validate() const {
    if (replications < 2) throw ConfigError("bootstrap replications must be at least 2");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap level must lie in (0,1)");
    if (weight_law != "exponential" && weight_law != "constant")
        throw ConfigError("unknown bootstrap weight law '" + weight_law + "' (exponential, constant)");
    if (threads < 1) throw ConfigError("bootstrap threads must be at least 1");
    if (!(max_failure_share >= 0.0 && max_failure_share < 1.0))
        throw ConfigError("bootstrap failure share must lie in [0,1)");
}

Eigen::VectorXd bootstrap_weights(const BootstrapConfig& config, int replication, Eigen::Index n) {
    if (config.weight_law == "constant") return Eigen::VectorXd::Ones(n);
    UniformStream uniform(mix(config.seed, static_cast<std::uint64_t>(replication)));
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = -std::log(uniform());
    return w;
}

BootstrapDraws draw_bootstrap(const Dataset& data, const PipelineSpec& spec, const PipelineResult& point,
                              const BootstrapConfig& config) {
    config.validate();
    const int R = config.replications;
    std::vector<std::optional<StructuralEstimates>> slots(static_cast<std::size_t>(R));
    std::vector<std::string> errors(static_cast<std::size_t>(R));

    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < R; r = next++) {
            try {
                const auto fit = fit_pipeline(data, spec, bootstrap_weights(config, r, data.n()), point.region);
                slots[static_cast<std::size_t>(r)] = fit.estimates;
            } catch (const Error& e) {
                // rank loss or a stalled solve under this weight draw
                if (e.category() == Error::Category::Usage || e.category() == Error::Category::Data) throw;
                errors[static_cast<std::size_t>(r)] = e.what();
            }
        }
    };
    const int threads = std::min(config.threads, R);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> thrown(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                try {
                    worker();
                } catch (...) {
                    thrown[static_cast<std::size_t>(t)] = std::current_exception();
                    next = R;
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : thrown)
            if (e) std::rethrow_exception(e);
    }

    BootstrapDraws draws;
    draws.replications = R;
    for (int r = 0; r < R; ++r) {
        const auto& s = slots[static_cast<std::size_t>(r)];
        if (!s) {
            draws.failed.push_back(r);
            draws.failure_messages.push_back(errors[static_cast<std::size_t>(r)]);
            continue;
        }
        draws.dsf.push_back(s->dsf.values);
        draws.qsf.push_back(s->qsf.values);
        draws.asf.push_back(s->asf.values);
    }
    return draws;
}

Bands max_t_band(const Eigen::MatrixXd& estimate, const std::vector<Eigen::MatrixXd>& draws, double level,
                 double* critical) {
    if (draws.empty()) throw NumericError("bootstrap: no successful replications");
    const Eigen::Index rows = estimate.rows(), cols = estimate.cols();
    const std::size_t R = draws.size();

    Eigen::MatrixXd scale(rows, cols);
    std::vector<double> column(R);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            for (std::size_t r = 0; r < R; ++r) column[r] = draws[r](i, j);
            std::sort(column.begin(), column.end());
            double s = (sample_quantile_type1(column, 0.75) - sample_quantile_type1(column, 0.25)) / 1.349;
            if (!(s > 0.0)) {
                double mean = 0.0, ss = 0.0;
                for (double v : column) mean += v;
                mean /= static_cast<double>(R);
                for (double v : column) ss += (v - mean) * (v - mean);
                s = std::sqrt(ss / static_cast<double>(R));
                // every draw equal: scale by its distance from the estimate
                if (!(s > 0.0)) s = std::abs(column.front() - estimate(i, j));
            }
            scale(i, j) = s;
        }
    }

    std::vector<double> stat(R, 0.0);
    for (std::size_t r = 0; r < R; ++r) {
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                if (scale(i, j) > 0.0)
                    stat[r] = std::max(stat[r], std::abs(draws[r](i, j) - estimate(i, j)) / scale(i, j));
    }
    std::sort(stat.begin(), stat.end());
    const double c = sample_quantile_type1(stat, level);
    if (critical) *critical = c;

    Bands band;
    band.level = level;
    band.lower = estimate - c * scale;
    band.upper = estimate + c * scale;
    return band;
}

StructuralEstimates attach_bands(const StructuralEstimates& point, const BootstrapDraws& draws, double level) {
    StructuralEstimates out = point;
    out.dsf.bands = max_t_band(point.dsf.values, draws.dsf, level);
    out.qsf.bands = max_t_band(point.qsf.values, draws.qsf, level);
    out.asf.bands = max_t_band(point.asf.values, draws.asf, level);
    return out;
}

BootstrapResult run_bootstrap(const Dataset& data, const PipelineSpec& spec, const PipelineResult& point,
                              const BootstrapConfig& config) {
    BootstrapResult out;
    out.draws = draw_bootstrap(data, spec, point, config);
    const auto failed = out.draws.failed.size();
    if (static_cast<double>(failed) > config.max_failure_share * config.replications) {
        std::string first = out.draws.failure_messages.empty() ? "" : ": " + out.draws.failure_messages.front();
        throw NumericError("bootstrap: " + std::to_string(failed) + " of " + std::to_string(config.replications) +
                           " replications failed" + first);
    }
    out.estimates = point.estimates;
    out.estimates.dsf.bands = max_t_band(point.estimates.dsf.values, out.draws.dsf, config.level, &out.critical_dsf);
    out.estimates.qsf.bands = max_t_band(point.estimates.qsf.values, out.draws.qsf, config.level, &out.critical_qsf);
    out.estimates.asf.bands = max_t_band(point.estimates.asf.values, out.draws.asf, config.level, &out.critical_asf);
    return out;
}

}  // namespace cvqr
