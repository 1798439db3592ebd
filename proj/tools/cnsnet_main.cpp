#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <string>

#include "cnsnet/config.hpp"
#include "cnsnet/data.hpp"
#include "cnsnet/evaluator.hpp"
#include "cnsnet/image_io.hpp"
#include "cnsnet/model.hpp"
#include "cnsnet/selftest.hpp"
#include "cnsnet/trainer.hpp"

using namespace cnsnet;

namespace {

struct Bundle {
    ModelConfig model;
    AdamConfig adam;
    SynthSpec synth;
    TrainOptions train;
};

Bundle load_bundle(const std::string& config_path) {
    Bundle b;
    if (!config_path.empty()) {
        KvDoc doc = KvDoc::load_file(config_path);
        from_kv(doc, b.model, b.adam, b.synth, b.train);
    }
    return b;
}

std::unique_ptr<CnsNet> model_from_checkpoint(const std::string& checkpoint, Bundle* stored_out = nullptr) {
    TensorArchive arch = TensorArchive::load(checkpoint);
    KvDoc meta = KvDoc::parse(arch.meta());
    Bundle stored;
    from_kv(meta, stored.model, stored.adam, stored.synth, stored.train);
    auto model = std::make_unique<CnsNet>(stored.model);
    for (auto& [name, t] : model->parameters().items) {
        Tensor v = arch.get_f32(name);
        if (v.shape() != t.shape()) {
            throw std::runtime_error("checkpoint parameter '" + name + "' has shape " + shape_str(v.shape()) +
                                     ", model expects " + shape_str(t.shape()));
        }
        std::copy(v.data(), v.data() + v.numel(), t.data());
    }
    if (stored_out) *stored_out = stored;
    return model;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir, const std::string& split,
              int count, unsigned long long seed) {
    Bundle b = load_bundle(config_path);
    SyntheticSource src(b.synth, seed, count);
    write_triplets(out_dir, split, src);
    std::cout << "wrote " << count << " triplets to " << out_dir << "/" << split << "_A|_B|_C\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_root, int synth_train, int synth_val,
              const std::string& out_path, unsigned long long seed, int steps, bool paper_scale,
              const std::string& ablation, const std::string& resume) {
    Bundle b = load_bundle(config_path);
    if (seed != 0) b.train.seed = seed;
    if (steps > 0) b.train.max_steps = steps;
    if (!out_path.empty()) b.train.checkpoint_path = out_path;
    if (paper_scale) b.train.apply_paper_scale();
    b.model = apply_ablation(b.model, ablation);
    b.model.input_size = b.train.patch;

    std::unique_ptr<TripletSource> train_src, val_src;
    if (!data_root.empty()) {
        std::vector<std::string> warnings;
        auto train_items = scan_istd(data_root, "train", &warnings);
        auto val_items = scan_istd(data_root, "test", &warnings);
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        std::cout << "dataset: " << train_items.size() << " train / " << val_items.size() << " val triplets\n";
        train_src = std::make_unique<DiskSource>(std::move(train_items));
        val_src = std::make_unique<DiskSource>(std::move(val_items));
    } else {
        b.synth.canvas = std::max(b.synth.canvas, b.train.patch);
        train_src = std::make_unique<SyntheticSource>(b.synth, b.train.seed * 1000000ull + 1000, synth_train);
        val_src = std::make_unique<SyntheticSource>(b.synth, b.train.seed * 1000000ull + 500000, synth_val);
        std::cout << "synthetic dataset: " << synth_train << " train / " << synth_val << " val triplets\n";
    }
    if (train_src->size() == 0) {
        std::cerr << "error: training dataset is empty\n";
        return 1;
    }

    Trainer trainer(b.model, b.adam, b.train);
    trainer.attach(train_src.get(), val_src.get());
    if (!resume.empty()) {
        trainer.load(resume);
        std::cout << "resumed from " << resume << " at step " << trainer.global_step() << "\n";
    }
    std::cout << "model parameters: " << trainer.model().param_count() << "\n";
    auto result = trainer.run(std::cout);
    std::cout << "best checkpoint: " << result.best_checkpoint << " (val shadow-RMSE " << result.best_val_rmse
              << ", identity baseline " << result.identity_val_rmse << ")\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& data_root, const std::string& split,
             const std::string& checkpoint, bool identity, const std::string& json_path, int limit,
             int synthetic, unsigned long long seed) {
    Bundle b = load_bundle(config_path);

    std::unique_ptr<TripletSource> src;
    if (synthetic > 0) {
        src = std::make_unique<SyntheticSource>(b.synth, seed * 1000000ull + 500000, synthetic);
    } else if (!data_root.empty()) {
        std::vector<std::string> warnings;
        auto items = scan_istd(data_root, split, &warnings);
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        std::cout << "dataset: " << items.size() << " triplets in split '" << split << "'\n";
        src = std::make_unique<DiskSource>(std::move(items));
    } else {
        std::cerr << "error: provide --data or --synthetic\n";
        return 1;
    }

    std::unique_ptr<CnsNet> model;
    if (!identity) {
        if (checkpoint.empty()) {
            std::cerr << "error: provide --checkpoint or use --identity\n";
            return 1;
        }
        model = model_from_checkpoint(checkpoint);
    }

    EvalOptions opts;
    opts.identity = identity;
    opts.limit = limit;
    MetricReport rep = evaluate_source(model.get(), *src, opts, &std::cerr);
    std::cout << rep.table();
    if (!json_path.empty()) {
        std::ofstream out(json_path, std::ios::trunc);
        out << rep.to_json() << "\n";
        std::cout << "json report written to " << json_path << "\n";
    }
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& input, const std::string& mask_path,
              const std::string& out_path, const std::string& out_mask_path) {
    auto model = model_from_checkpoint(checkpoint);
    Tensor shadow = load_image(input, 3);
    Tensor mask = load_mask(mask_path);
    if (shadow.dim(1) != mask.dim(0) || shadow.dim(2) != mask.dim(1)) {
        std::cerr << "error: image " << shape_str(shadow.shape()) << " and mask " << shape_str(mask.shape())
                  << " are not aligned\n";
        return 1;
    }
    InferResult res = infer_padded(*model, shadow, mask);
    save_image(out_path, res.image);
    std::cout << "wrote " << out_path << "\n";
    if (!out_mask_path.empty()) {
        save_image(out_mask_path, reshape(res.soft_mask, {1, res.soft_mask.dim(0), res.soft_mask.dim(1)}));
        std::cout << "wrote " << out_mask_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CNSNet shadow removal: synthesis, training, evaluation, inference, self-check"};
    app.require_subcommand(1);

    std::string config_path, data_root, split = "test", checkpoint, json_path, out_dir, out_path;
    std::string input, mask_path, out_mask_path, ablation = "none", resume;
    int count = 64, limit = 0, steps = 0, synth_train = 500, synth_val = 64, synthetic = 0;
    unsigned long long seed = 0;
    bool identity = false, paper_scale = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic triplet dataset on disk");
    synth->add_option("--config", config_path, "key-value config file");
    synth->add_option("--out", out_dir, "output dataset root")->required();
    synth->add_option("--split", split, "split name (default test)");
    synth->add_option("--count", count, "number of triplets");
    synth->add_option("--seed", seed, "base seed");

    auto* train = app.add_subcommand("train", "train on synthetic or ISTD-layout data");
    train->add_option("--config", config_path, "key-value config file");
    train->add_option("--data", data_root, "ISTD-layout dataset root (train/test splits)");
    train->add_option("--synth-train", synth_train, "synthetic training triplets when no --data");
    train->add_option("--synth-val", synth_val, "synthetic validation triplets when no --data");
    train->add_option("--out", out_path, "checkpoint output path");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--steps", steps, "max optimizer steps");
    train->add_option("--ablation", ablation, "none|no_soan|no_saat|soan_bn|soan_in|saat_hardmask");
    train->add_option("--resume", resume, "checkpoint to resume from");
    train->add_flag("--paper-scale", paper_scale, "batch 8, patch 256");

    auto* ev = app.add_subcommand("eval", "region-wise LAB metrics over a dataset split");
    ev->add_option("--config", config_path, "key-value config file");
    ev->add_option("--data", data_root, "ISTD-layout dataset root");
    ev->add_option("--split", split, "split name (default test)");
    ev->add_option("--synthetic", synthetic, "evaluate on N synthetic triplets instead of --data");
    ev->add_option("--seed", seed, "seed for --synthetic");
    ev->add_option("--checkpoint", checkpoint, "trained checkpoint");
    ev->add_option("--json", json_path, "write the machine-readable report here");
    ev->add_option("--limit", limit, "evaluate only the first N images");
    ev->add_flag("--identity", identity, "score the input shadow image itself");

    auto* inf = app.add_subcommand("infer", "run a checkpoint on one image");
    inf->add_option("--checkpoint", checkpoint)->required();
    inf->add_option("--input", input, "shadow image (PNG)")->required();
    inf->add_option("--mask", mask_path, "hard shadow mask (PNG)")->required();
    inf->add_option("--out", out_path, "output image path")->required();
    inf->add_option("--out-mask", out_mask_path, "predicted soft mask output path");

    auto* self = app.add_subcommand("selftest", "run the invariant battery");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config_path, out_dir, split, count, seed);
        if (train->parsed())
            return cmd_train(config_path, data_root, synth_train, synth_val, out_path, seed, steps,
                             paper_scale, ablation, resume);
        if (ev->parsed())
            return cmd_eval(config_path, data_root, split, checkpoint, identity, json_path, limit, synthetic,
                            seed);
        if (inf->parsed()) return cmd_infer(checkpoint, input, mask_path, out_path, out_mask_path);
        if (self->parsed()) {
            auto results = run_selftest(&std::cout);
            const bool ok = all_passed(results);
            std::cout << (ok ? "all checks passed\n" : "SELFTEST FAILED\n");
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
