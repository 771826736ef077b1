#pragma once

#include <cstdint>
#include <vector>

namespace msdn {

// 2|P and G| / (|P| + |G|) for label class cls; 1.0 when both sets are empty.
double dice_score(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth, int cls);

// Mean dice over foreground classes 1..classes.
double foreground_dice(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth, int classes);

// Two-sided 95% t-interval over run means: {mean, half_width}. Width is 0
// for a single run or zero variance.
struct MeanCi {
    double mean = 0.0;
    double half_width = 0.0;
};
MeanCi t_interval_95(const std::vector<double>& run_means);

}  // namespace msdn
