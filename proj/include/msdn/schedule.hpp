#pragma once

#include <optional>
#include <string>
#include <vector>

namespace msdn {

// One RunLog row; test_dice is present only on epochs where validation
// improved and the test split was evaluated.
struct EpochRecord {
    int epoch = 0;
    double seg_loss = 0.0;
    double det_loss = 0.0;
    double val_dice = 0.0;
    std::optional<double> test_dice;
    double lr = 0.0;
};

struct RunLog {
    std::vector<EpochRecord> rows;

    static const char* csv_header();  // "epoch,seg_loss,det_loss,val_dice,test_dice,lr"
    std::string to_csv() const;
};

std::string epoch_record_csv(const EpochRecord& r);

// Plateau LR schedule with early stopping. The running best resets both
// counters on strict improvement (tolerance `tol`); the first observation
// sets the baseline and counts as a plateau epoch, so a fully flat trace
// reduces at epochs 5, 10, 15, 20 and stops at 20 with the default patiences.
// The plateau counter also resets on each reduction; the stop counter resets
// only on improvement.
class ScheduleState {
public:
    ScheduleState(double initial_lr, double factor, int plateau_patience, int stop_patience,
                  double tol = 1e-6);

    struct Decision {
        bool improved = false;  // strict improvement over previous best (first epoch included)
        bool reduced = false;
        bool stop = false;
    };

    Decision observe(double val_metric);

    double lr() const { return lr_; }
    double best() const { return best_; }
    int reductions() const { return reductions_; }

    // Raw state for checkpointing.
    bool seen_any() const { return seen_any_; }
    int plateau_counter() const { return plateau_ctr_; }
    int stop_counter() const { return stop_ctr_; }
    void restore(double lr, double best, bool seen_any, int plateau_ctr, int stop_ctr, int reductions);

private:
    double lr_;
    double factor_;
    int plateau_patience_;
    int stop_patience_;
    double tol_;
    double best_;
    bool seen_any_ = false;
    int plateau_ctr_ = 0;
    int stop_ctr_ = 0;
    int reductions_ = 0;
};

// Pure replay of the schedule over a validation-dice history: returns the lr
// in effect after the last epoch and whether training should stop.
struct ScheduleOutcome {
    double lr = 0.0;
    bool stop = false;
};
ScheduleOutcome schedule_and_stop(const std::vector<double>& val_dice_history, double initial_lr,
                                  double factor, int plateau_patience, int stop_patience,
                                  double tol = 1e-6);

}  // namespace msdn
