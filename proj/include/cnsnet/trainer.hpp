#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "cnsnet/config.hpp"
#include "cnsnet/data.hpp"
#include "cnsnet/model.hpp"
#include "cnsnet/optim.hpp"

namespace cnsnet {

struct StepLog {
    std::int64_t step = 0;
    int epoch = 0;
    double rem = 0, soft = 0, per = 0, grad = 0, total = 0;
    double lr = 0;
};

// Owns the model, optimizer, and epoch bookkeeping. All randomness
// (shuffling, augmentation) is derived from (seed, epoch, position), so
// a checkpoint resume continues the exact same stream.
class Trainer {
public:
    Trainer(const ModelConfig& mcfg, const AdamConfig& acfg, const TrainOptions& opt);

    void attach(const TripletSource* train, const TripletSource* val);

    StepLog step();      // one optimizer step
    double validate();   // pooled shadow-region RMSE on the val source

    struct RunResult {
        double best_val_rmse = 0;
        double identity_val_rmse = 0;  // input image scored as-is
        std::int64_t steps = 0;
        std::string best_checkpoint;
    };
    // Full loop: steps with per-step component logging, per-epoch
    // validation, best-checkpoint saving, plateau lr decay.
    RunResult run(std::ostream& log);

    void save(const std::string& path) const;
    void load(const std::string& path);

    CnsNet& model() { return *model_; }
    const CnsNet& model() const { return *model_; }
    std::int64_t global_step() const { return global_step_; }
    int epoch() const { return epoch_; }
    double lr() const { return adam_.lr(); }

    // Identity-baseline shadow RMSE of the validation source.
    double identity_baseline();

private:
    void ensure_epoch_order();
    ImageTriplet draw_item(int order_pos);

    ModelConfig mcfg_;
    AdamConfig acfg_;
    TrainOptions opt_;
    std::unique_ptr<CnsNet> model_;
    PerceptualExtractorT<float> extractor_;
    ParamMap<float>* params_ = nullptr;
    Adam adam_;
    const TripletSource* train_ = nullptr;
    const TripletSource* val_ = nullptr;

    std::int64_t global_step_ = 0;
    int epoch_ = 0;
    int pos_ = 0;  // index into the current epoch permutation
    double best_val_ = 0;
    bool has_best_ = false;
    int patience_ = 0;
    std::vector<int> order_;
    int order_epoch_ = -1;
};

}  // namespace cnsnet
