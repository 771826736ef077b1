#include "msdn/metrics.hpp"

#include <cmath>

#include "msdn/errors.hpp"

namespace msdn {

double dice_score(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth, int cls) {
    if (pred.size() != truth.size()) {
        throw DimensionError("dice_score label maps differ in size: " + std::to_string(pred.size()) + " vs " +
                             std::to_string(truth.size()));
    }
    std::int64_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool in_p = pred[i] == cls;
        const bool in_g = truth[i] == cls;
        p += in_p;
        g += in_g;
        both += in_p && in_g;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

double foreground_dice(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth, int classes) {
    double acc = 0.0;
    for (int c = 1; c <= classes; ++c) acc += dice_score(pred, truth, c);
    return acc / static_cast<double>(classes);
}

namespace {
// Two-sided 95% critical values of Student's t, df 1..30.
constexpr double kT975[30] = {
    12.7062047364, 4.3026527297, 3.1824463053, 2.7764451052, 2.5705818356, 2.4469118511, 2.3646242516,
    2.3060041352,  2.2621571628, 2.2281388520, 2.2009851601, 2.1788128297, 2.1603686565, 2.1447866879,
    2.1314495456,  2.1199052992, 2.1098155778, 2.1009220402, 2.0930240544, 2.0859634473, 2.0796138447,
    2.0738730679,  2.0686576104, 2.0638985616, 2.0595385528, 2.0555294386, 2.0518305165, 2.0484071418,
    2.0452296421,  2.0422724563};
}  // namespace

MeanCi t_interval_95(const std::vector<double>& run_means) {
    if (run_means.empty()) throw DataError("t_interval_95 needs at least one run mean");
    const auto n = run_means.size();
    double mean = 0.0;
    for (double v : run_means) mean += v;
    mean /= static_cast<double>(n);
    if (n == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : run_means) ss += (v - mean) * (v - mean);
    const double s = std::sqrt(ss / static_cast<double>(n - 1));
    const std::size_t df = n - 1;
    const double t = df <= 30 ? kT975[df - 1] : 1.9599639845;
    return {mean, t * s / std::sqrt(static_cast<double>(n))};
}

}  // namespace msdn
