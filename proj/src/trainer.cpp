#include "cnsnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "cnsnet/image_io.hpp"
#include "cnsnet/mask_ops.hpp"
#include "cnsnet/metrics.hpp"
#include "cnsnet/tensor_ops.hpp"

namespace cnsnet {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t salt) {
    return mix64(mix64(mix64(seed ^ salt) ^ a) ^ b);
}

}  // namespace

Trainer::Trainer(const ModelConfig& mcfg, const AdamConfig& acfg, const TrainOptions& opt)
    : mcfg_(mcfg), acfg_(acfg), opt_(opt) {
    model_ = std::make_unique<CnsNet>(mcfg_);
    Rng per_rng(mcfg_.init_seed ^ 0x70657263ull);  // independent stream for the frozen extractor
    extractor_ = PerceptualExtractorT<float>(per_rng);
    params_ = &model_->parameters();
    adam_ = Adam(params_, acfg_);
}

void Trainer::attach(const TripletSource* train, const TripletSource* val) {
    train_ = train;
    val_ = val;
}

void Trainer::ensure_epoch_order() {
    if (order_epoch_ == epoch_) return;
    const int n = train_->size();
    order_.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order_[static_cast<size_t>(i)] = i;
    Rng rng(derive_seed(opt_.seed, static_cast<std::uint64_t>(epoch_), 0, 0x736875ull));
    for (int i = n - 1; i > 0; --i) {
        std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(rng.uniform_int(0, i))]);
    }
    order_epoch_ = epoch_;
}

ImageTriplet Trainer::draw_item(int order_pos) {
    const int idx = order_[static_cast<size_t>(order_pos)];
    ImageTriplet t = train_->get(idx);
    Rng rng(derive_seed(opt_.seed, static_cast<std::uint64_t>(epoch_), static_cast<std::uint64_t>(order_pos),
                        0x617567ull));
    return augment(t, opt_.patch, rng);
}

StepLog Trainer::step() {
    if (!train_ || train_->size() == 0) throw std::runtime_error("trainer: empty or missing training set");
    ensure_epoch_order();
    const int n = train_->size();
    const int batch = std::min(opt_.batch, n);
    if (pos_ + batch > n) {
        ++epoch_;
        pos_ = 0;
        ensure_epoch_order();
    }

    const int p = opt_.patch;
    const std::int64_t plane = static_cast<std::int64_t>(p) * p;
    Tensor shadow = Tensor::uninit({batch, 3, p, p});
    Tensor mask = Tensor::uninit({batch, 1, p, p});
    Tensor free = Tensor::uninit({batch, 3, p, p});
    Tensor soft_target = Tensor::uninit({batch, 1, p, p});
    Tensor dilated = Tensor::uninit({batch, 1, p, p});
    for (int b = 0; b < batch; ++b) {
        ImageTriplet t = draw_item(pos_ + b);
        Tensor st = soft_mask_target(t.shadow, t.shadow_free);
        Tensor dm = dilate(t.mask, mcfg_.grad_dilate_radius);
        std::memcpy(shadow.data() + static_cast<std::int64_t>(b) * 3 * plane, t.shadow.data(),
                    sizeof(float) * 3 * plane);
        std::memcpy(free.data() + static_cast<std::int64_t>(b) * 3 * plane, t.shadow_free.data(),
                    sizeof(float) * 3 * plane);
        std::memcpy(mask.data() + static_cast<std::int64_t>(b) * plane, t.mask.data(), sizeof(float) * plane);
        std::memcpy(soft_target.data() + static_cast<std::int64_t>(b) * plane, st.data(), sizeof(float) * plane);
        std::memcpy(dilated.data() + static_cast<std::int64_t>(b) * plane, dm.data(), sizeof(float) * plane);
    }
    pos_ += batch;

    auto out = model_->forward(shadow, mask);
    Tensor l_rem = loss_rem(out.image, free);
    Tensor l_soft = soft_mask_loss(out.soft_mask, soft_target);
    Tensor l_per = loss_per(out.image, free, extractor_);
    Tensor l_grad = loss_grad(out.image, shadow, free, dilated);
    LossWeights lw{mcfg_.lambda_rem, mcfg_.lambda_soft, mcfg_.lambda_per, mcfg_.lambda_grad};
    Tensor total = loss_total(l_rem, l_soft, l_per, l_grad, lw);

    StepLog log;
    log.rem = l_rem.item();
    log.soft = l_soft.item();
    log.per = l_per.item();
    log.grad = l_grad.item();
    log.total = total.item();
    log.lr = adam_.lr();
    log.epoch = epoch_;
    if (!std::isfinite(log.total)) {
        throw std::runtime_error("trainer: non-finite loss at step " + std::to_string(global_step_) +
                                 " (rem=" + std::to_string(log.rem) + " soft=" + std::to_string(log.soft) +
                                 " per=" + std::to_string(log.per) + " grad=" + std::to_string(log.grad) + ")");
    }

    adam_.zero_grad();
    backward(total);
    adam_.step();
    adam_.zero_grad();

    ++global_step_;
    log.step = global_step_;
    return log;
}

double Trainer::validate() {
    if (!val_ || val_->size() == 0) throw std::runtime_error("trainer: empty or missing validation set");
    NoGradGuard ng;
    double sum = 0;
    std::int64_t count = 0;
    for (int i = 0; i < val_->size(); ++i) {
        ImageTriplet t = val_->get(i);
        auto out = model_->forward_single(t.shadow, t.mask);
        Tensor pred = quantize8(out.image);
        RegionSelector sel{Region::Shadow, t.mask};
        accumulate_mae(pred, t.shadow_free, sel, sum, count);
    }
    return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

double Trainer::identity_baseline() {
    if (!val_ || val_->size() == 0) throw std::runtime_error("trainer: empty or missing validation set");
    double sum = 0;
    std::int64_t count = 0;
    for (int i = 0; i < val_->size(); ++i) {
        ImageTriplet t = val_->get(i);
        RegionSelector sel{Region::Shadow, t.mask};
        accumulate_mae(quantize8(t.shadow), t.shadow_free, sel, sum, count);
    }
    return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

Trainer::RunResult Trainer::run(std::ostream& log) {
    RunResult result;
    result.identity_val_rmse = identity_baseline();
    log << "identity baseline shadow-RMSE " << result.identity_val_rmse << "\n";

    int last_validated_epoch = -1;
    while (global_step_ < opt_.max_steps && epoch_ < opt_.max_epochs) {
        const int epoch_before = epoch_;
        StepLog s = step();
        if (s.step % opt_.log_every == 0 || s.step == 1) {
            log << "step " << s.step << " epoch " << s.epoch << " lr " << s.lr << " total " << s.total
                << " rem " << s.rem << " soft " << s.soft << " per " << s.per << " grad " << s.grad << "\n";
        }
        if (epoch_ != epoch_before && epoch_ != last_validated_epoch) {
            last_validated_epoch = epoch_;
            const double val = validate();
            const bool improved = !has_best_ || val < best_val_;
            log << "epoch " << epoch_before << " done: val shadow-RMSE " << val
                << (improved ? " (new best)" : "") << "\n";
            if (improved) {
                best_val_ = val;
                has_best_ = true;
                patience_ = 0;
                save(opt_.checkpoint_path);
            } else if (++patience_ >= acfg_.plateau_epochs) {
                adam_.set_lr(adam_.lr() * acfg_.decay_factor);
                patience_ = 0;
                log << "plateau: lr decayed to " << adam_.lr() << "\n";
            }
        }
    }
    const double final_val = validate();
    if (!has_best_ || final_val < best_val_) {
        best_val_ = final_val;
        has_best_ = true;
        save(opt_.checkpoint_path);
    }
    save(opt_.checkpoint_path + ".last");
    log << "final val shadow-RMSE " << final_val << ", best " << best_val_ << "\n";
    result.best_val_rmse = best_val_;
    result.steps = global_step_;
    result.best_checkpoint = opt_.checkpoint_path;
    return result;
}

void Trainer::save(const std::string& path) const {
    TensorArchive arch;
    for (const auto& [name, t] : params_->items) arch.add(name, t);
    adam_.save_state(arch, "adam");

    KvDoc meta = to_kv(mcfg_, acfg_, SynthSpec{}, opt_);
    meta.set_int("state.global_step", global_step_);
    meta.set_int("state.epoch", epoch_);
    meta.set_int("state.pos", pos_);
    meta.set_double("state.best_val", best_val_);
    meta.set_bool("state.has_best", has_best_);
    meta.set_int("state.patience", patience_);
    arch.set_meta(meta.serialize());
    arch.save(path);
    meta.save_file(path + ".cfg");
}

void Trainer::load(const std::string& path) {
    TensorArchive arch = TensorArchive::load(path);
    KvDoc meta = KvDoc::parse(arch.meta());

    ModelConfig stored_m;
    AdamConfig stored_a;
    SynthSpec stored_s;
    TrainOptions stored_t;
    from_kv(meta, stored_m, stored_a, stored_s, stored_t);
    const std::string want = to_kv(mcfg_, acfg_, SynthSpec{}, opt_).serialize();
    const std::string got = to_kv(stored_m, stored_a, SynthSpec{}, opt_).serialize();
    if (want != got) {
        throw std::runtime_error("checkpoint '" + path + "' was written with a different configuration");
    }

    for (auto& [name, t] : params_->items) {
        Tensor stored = arch.get_f32(name);
        if (stored.shape() != t.shape()) {
            throw std::runtime_error("checkpoint parameter '" + name + "' shape mismatch");
        }
        std::memcpy(t.data(), stored.data(), sizeof(float) * static_cast<size_t>(t.numel()));
    }
    adam_.load_state(arch, "adam");
    global_step_ = meta.get_int("state.global_step", 0);
    epoch_ = static_cast<int>(meta.get_int("state.epoch", 0));
    pos_ = static_cast<int>(meta.get_int("state.pos", 0));
    best_val_ = meta.get_double("state.best_val", 0.0);
    has_best_ = meta.get_bool("state.has_best", false);
    patience_ = static_cast<int>(meta.get_int("state.patience", 0));
    order_epoch_ = -1;
}

}  // namespace cnsnet
