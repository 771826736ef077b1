#include "msdn/schedule.hpp"

#include <cstdio>
#include <limits>

#include "msdn/errors.hpp"

namespace msdn {

const char* RunLog::csv_header() { return "epoch,seg_loss,det_loss,val_dice,test_dice,lr"; }

std::string epoch_record_csv(const EpochRecord& r) {
    char buf[160];
    if (r.test_dice.has_value()) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.10g", r.epoch, r.seg_loss, r.det_loss,
                      r.val_dice, *r.test_dice, r.lr);
    } else {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,,%.10g", r.epoch, r.seg_loss, r.det_loss,
                      r.val_dice, r.lr);
    }
    return buf;
}

std::string RunLog::to_csv() const {
    std::string out = csv_header();
    out += '\n';
    for (const auto& r : rows) {
        out += epoch_record_csv(r);
        out += '\n';
    }
    return out;
}

ScheduleState::ScheduleState(double initial_lr, double factor, int plateau_patience, int stop_patience,
                             double tol)
    : lr_(initial_lr),
      factor_(factor),
      plateau_patience_(plateau_patience),
      stop_patience_(stop_patience),
      tol_(tol),
      best_(-std::numeric_limits<double>::infinity()) {
    if (plateau_patience < 1 || stop_patience < 1) throw ConfigError("patience values must be >= 1");
}

ScheduleState::Decision ScheduleState::observe(double val_metric) {
    Decision d;
    d.improved = val_metric > best_ + tol_;
    if (d.improved) best_ = val_metric;

    if (d.improved && seen_any_) {
        plateau_ctr_ = 0;
        stop_ctr_ = 0;
    } else {
        ++plateau_ctr_;
        ++stop_ctr_;
    }
    seen_any_ = true;

    if (plateau_ctr_ >= plateau_patience_) {
        lr_ *= factor_;
        ++reductions_;
        plateau_ctr_ = 0;
        d.reduced = true;
    }
    if (stop_ctr_ >= stop_patience_) d.stop = true;
    return d;
}

void ScheduleState::restore(double lr, double best, bool seen_any, int plateau_ctr, int stop_ctr,
                            int reductions) {
    lr_ = lr;
    best_ = best;
    seen_any_ = seen_any;
    plateau_ctr_ = plateau_ctr;
    stop_ctr_ = stop_ctr;
    reductions_ = reductions;
}

ScheduleOutcome schedule_and_stop(const std::vector<double>& val_dice_history, double initial_lr,
                                  double factor, int plateau_patience, int stop_patience, double tol) {
    if (val_dice_history.empty()) throw ContractError("schedule_and_stop requires a non-empty history");
    ScheduleState st(initial_lr, factor, plateau_patience, stop_patience, tol);
    ScheduleOutcome out;
    for (double v : val_dice_history) {
        const auto d = st.observe(v);
        out.stop = d.stop;
    }
    out.lr = st.lr();
    return out;
}

}  // namespace msdn
