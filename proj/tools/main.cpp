// vsmk command-line entry point.
//
//   synth      generate a synthetic four-view dataset (PGM files + manifest)
//   train      train a classifier on a manifest directory
//   eval       evaluate a saved checkpoint on a manifest directory
//   gradcheck  finite-difference verification of the analytic gradients
//   bench      timing table for the sequence-scan implementations
//
// Settings precedence: built-in defaults < --config file < explicit flags.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vsmk/checkpoint.hpp"
#include "vsmk/config.hpp"
#include "vsmk/data.hpp"
#include "vsmk/model.hpp"
#include "vsmk/model_check.hpp"
#include "vsmk/simd/kernels.hpp"
#include "vsmk/ss2d.hpp"
#include "vsmk/ssm.hpp"
#include "vsmk/synthetic.hpp"
#include "vsmk/train.hpp"

namespace fs = std::filesystem;
using namespace vsmk;

namespace {

model::ModelConfig model_config_from(const config::Settings& s) {
    model::ModelConfig mc;
    mc.task = model::parse_task(s.get_string_or("task", "multi"));
    mc.variant = model::parse_variant(s.get_string_or("backbone", "hybrid"));
    mc.binding = model::parse_binding(s.get_string_or("binding", "shared"));
    mc.birads_classes = model::parse_birads_set(s.get_string_or("birads_set", "15"));
    mc.image_size = std::size_t(s.get_int_or("image_size", 64));
    mc.feature_dim = std::size_t(s.get_int_or("feature_dim", 128));
    mc.stem_channels = std::size_t(s.get_int_or("stem_channels", 16));
    mc.embed_channels = std::size_t(s.get_int_or("embed_channels", 64));
    mc.n_state = std::size_t(s.get_int_or("n_state", 16));
    mc.dt_rank = std::size_t(s.get_int_or("dt_rank", 8));
    mc.dropout_p = s.get_double_or("dropout", 0.5);
    mc.init_seed = std::uint64_t(s.get_int_or("init_seed", s.get_int_or("seed", 0)));
    mc.validate();
    return mc;
}

train::TrainConfig train_config_from(const config::Settings& s) {
    train::TrainConfig tc;
    tc.lr = s.get_double_or("lr", -1.0);
    tc.weight_decay = s.get_double_or("weight_decay", 0.05);
    tc.clip_norm = s.get_double_or("clip_norm", 1.0);
    tc.batch_size = std::size_t(s.get_int_or("batch_size", 8));
    tc.max_epochs = std::size_t(s.get_int_or("max_epochs", 100));
    tc.plateau_factor = s.get_double_or("plateau_factor", 0.5);
    tc.plateau_patience = std::size_t(s.get_int_or("plateau_patience", 10));
    tc.train_fraction = s.get_double_or("train_fraction", 0.8);
    tc.seed = std::uint64_t(s.get_int_or("seed", 0));
    if (s.has("stop_at_score")) tc.stop_at_score = s.get_double("stop_at_score");
    tc.validate();
    return tc;
}

// Every resolved value, so a checkpoint can rebuild its model unambiguously.
config::Settings snapshot(const model::ModelConfig& mc, const train::TrainConfig& tc) {
    config::Settings s;
    s.set("task", model::to_string(mc.task));
    s.set("backbone", model::to_string(mc.variant));
    s.set("binding", model::to_string(mc.binding));
    s.set("birads_set", model::birads_set_name(mc.birads_classes));
    s.set("image_size", std::to_string(mc.image_size));
    s.set("feature_dim", std::to_string(mc.feature_dim));
    s.set("stem_channels", std::to_string(mc.stem_channels));
    s.set("embed_channels", std::to_string(mc.embed_channels));
    s.set("n_state", std::to_string(mc.n_state));
    s.set("dt_rank", std::to_string(mc.dt_rank));
    s.set("dropout", train::csv_num(mc.dropout_p));
    s.set("init_seed", std::to_string(mc.init_seed));
    s.set("seed", std::to_string(tc.seed));
    s.set("lr", train::csv_num(tc.resolved_lr(mc.variant)));
    s.set("weight_decay", train::csv_num(tc.weight_decay));
    s.set("clip_norm", train::csv_num(tc.clip_norm));
    s.set("batch_size", std::to_string(tc.batch_size));
    s.set("max_epochs", std::to_string(tc.max_epochs));
    s.set("plateau_factor", train::csv_num(tc.plateau_factor));
    s.set("plateau_patience", std::to_string(tc.plateau_patience));
    s.set("train_fraction", train::csv_num(tc.train_fraction));
    return s;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
}

std::string opt_str(const std::optional<double>& v) {
    return v ? train::csv_num(*v) : std::string("-");
}

void print_epoch(const train::EpochRow& r) {
    std::printf("epoch %3zu  lr %-10.4g loss %-9.5f label auc %-7s f1 %-7s birads auc %-7s f1 %-7s\n",
                r.epoch, r.lr, r.train_loss, opt_str(r.label.auc).c_str(),
                opt_str(r.label.f1).c_str(), opt_str(r.birads.auc).c_str(),
                opt_str(r.birads.f1).c_str());
    std::fflush(stdout);
}

void print_report(const train::EvalReport& rep) {
    std::printf("label:  auc %s  macro-f1 %s\n", opt_str(rep.label.auc).c_str(),
                opt_str(rep.label.f1).c_str());
    std::printf("birads: auc %s  macro-f1 %s\n", opt_str(rep.birads.auc).c_str(),
                opt_str(rep.birads.f1).c_str());
    std::printf("combined score: %s\n", opt_str(rep.combined).c_str());
}

// ---- subcommand bodies ------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::size_t n = 400;
    std::size_t size = 64;
    std::uint64_t seed = 0;
    std::string birads_set = "15";
    double missing_prob = 0.1;
    double divergence_prob = 0.1;
};

int run_synth(const SynthArgs& a) {
    data::SyntheticSpec spec;
    spec.image_size = a.size;
    spec.grades = model::parse_birads_set(a.birads_set);
    spec.missing_side_prob = a.missing_prob;
    spec.divergence_prob = a.divergence_prob;
    spec.seed = a.seed;
    auto studies = data::generate_synthetic(spec, a.n);
    fs::create_directories(a.out);
    data::export_dataset(a.out, studies);
    std::size_t complete = 0;
    for (const auto& s : studies)
        complete += s.presence[0] && s.presence[2];
    std::printf("wrote %zu studies (%zu complete) to %s\n", studies.size(), complete,
                a.out.c_str());
    return 0;
}

struct RunArgs {
    std::string config_path;
    std::string data;
    std::string out = ".";
    std::string checkpoint;
    config::Settings overrides;
};

int run_train(const RunArgs& a) {
    config::Settings s;
    if (!a.config_path.empty()) s = config::Settings::parse_file(a.config_path);
    s.merge(a.overrides);
    model::ModelConfig mc = model_config_from(s);
    train::TrainConfig tc = train_config_from(s);

    auto studies = data::ingest(a.data, mc.image_size);
    std::printf("loaded %zu studies from %s\n", studies.size(), a.data.c_str());
    std::printf("backbone %s, binding %s, task %s, grades %s, image %zux%zu\n",
                model::to_string(mc.variant).c_str(), model::to_string(mc.binding).c_str(),
                model::to_string(mc.task).c_str(),
                model::birads_set_name(mc.birads_classes).c_str(), mc.image_size,
                mc.image_size);

    model::Model<float> m(mc);
    auto result = train::train_model<float>(m, studies, tc, print_epoch);

    fs::create_directories(a.out);
    const fs::path out(a.out);
    write_file(out / "metrics.csv", train::metrics_csv(result.history));
    if (result.best_epoch == 0) {
        std::printf("no epoch produced a defined combined score; nothing saved\n");
        return 1;
    }
    write_file(out / "attention.csv", train::attention_csv(result.best_eval.attention));
    nn::ParamStore<float> best(0);
    for (const auto& [name, t] : result.best_params) best.set(name, t);
    ckpt::save(out / "best.vsmk", snapshot(mc, tc), best);
    std::printf("best epoch %zu, combined score %s\n", result.best_epoch,
                opt_str(result.best_score).c_str());
    print_report(result.best_eval);
    std::printf("saved %s, metrics.csv, attention.csv\n", (out / "best.vsmk").c_str());
    return 0;
}

int run_eval(const RunArgs& a) {
    model::ModelConfig probe;  // settings arrive from the checkpoint itself
    nn::ParamStore<float> loaded(0);
    config::Settings s = ckpt::load(a.checkpoint, loaded);
    s.merge(a.overrides);
    model::ModelConfig mc = model_config_from(s);
    (void)probe;

    model::Model<float> m(mc);
    for (const auto& [name, t] : loaded.entries()) m.params().set(name, t);

    auto studies = data::ingest(a.data, mc.image_size);
    std::vector<std::size_t> all(studies.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const std::size_t batch = std::size_t(s.get_int_or("batch_size", 8));
    train::EvalReport rep = train::evaluate(m, studies, all, batch);

    std::printf("evaluated %zu studies from %s\n", studies.size(), a.data.c_str());
    print_report(rep);
    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "attention.csv", train::attention_csv(rep.attention));
    std::printf("wrote %s\n", (fs::path(a.out) / "attention.csv").c_str());
    return 0;
}

struct GradcheckArgs {
    std::string mode = "both";
    std::uint64_t seed = 0;
};

int run_gradcheck(const GradcheckArgs& a) {
    int rc = 0;
    auto judge = [&](const char* name, const model::CheckResult& res, double tol) {
        const bool ok = res.report.max_rel < tol && res.report.checked > 0;
        std::printf("%-22s %s  (%s, %zu coordinates, tolerance %g)\n", name,
                    ok ? "PASS" : "FAIL", res.describe().c_str(), res.report.checked, tol);
        if (!ok) rc = 1;
    };

    if (a.mode == "both" || a.mode == "fusion-head") {
        Rng rng(mix64(a.seed, fnv1a64("fusion-head")));
        auto res = model::fd_check_fusion_head(3, 6, 3, model::Task::Multi, 25, rng);
        judge("fusion-head", res, 1e-6);
    }
    if (a.mode == "both" || a.mode == "full") {
        model::ModelConfig mc;
        mc.task = model::Task::Multi;
        mc.variant = model::Variant::Hybrid;
        mc.binding = model::Binding::Shared;
        mc.image_size = 16;
        mc.feature_dim = 16;
        mc.stem_channels = 2;
        mc.embed_channels = 8;
        mc.n_state = 4;
        mc.dt_rank = 2;
        mc.birads_classes = {1, 5};
        mc.block_override = 1;
        mc.init_seed = a.seed;

        Rng rng(mix64(a.seed, fnv1a64("full")));
        model::Model<double> m(mc);
        model::Batch<double> batch;
        const std::size_t B = 2;
        for (auto& img : batch.images) {
            img = Tensor<double>({B, 3, mc.image_size, mc.image_size});
            for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform(0.0, 1.0);
        }
        batch.labels.label_l = {1, 0};
        batch.labels.label_r = {0, -1};
        batch.labels.birads_l = {1, 0};
        batch.labels.birads_r = {0, -1};
        batch.study_ids = {"gc-0", "gc-1"};
        model::TaskWeights<double> w{Tensor<double>::full({2}, 1.0),
                                     Tensor<double>::full({mc.n_birads()}, 1.0)};
        auto res = model::fd_check_model(m, batch, w, 6, rng);
        judge("full-hybrid-1block", res, 1e-3);
    }
    return rc;
}

struct BenchArgs {
    std::string out;  // empty -> stdout
    std::string modes = "recurrent,kernel,ss2d";
    std::vector<std::size_t> lengths = {1024, 2048, 4096, 8192};
    std::size_t n_state = 16;
    std::uint64_t seed = 0;
};

template <typename F>
double median_seconds(F&& fn) {
    using clock = std::chrono::steady_clock;
    auto once = [&] {
        const auto t0 = clock::now();
        fn();
        return std::chrono::duration<double>(clock::now() - t0).count();
    };
    const double probe = once();
    const std::size_t reps = probe > 0 ? std::max<std::size_t>(1, std::size_t(0.03 / probe)) : 1;
    std::array<double, 3> runs{};
    for (auto& r : runs) {
        const auto t0 = clock::now();
        for (std::size_t i = 0; i < reps; ++i) fn();
        r = std::chrono::duration<double>(clock::now() - t0).count() / double(reps);
    }
    std::sort(runs.begin(), runs.end());
    return runs[1];
}

int run_bench(const BenchArgs& a) {
    Rng rng(a.seed);
    auto rand_tensor = [&](typename Tensor<float>::Shape shape, double lo, double hi) {
        Tensor<float> t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i)
            t.data()[i] = float(rng.uniform(lo, hi));
        return t;
    };

    ssm::SsmParams<float> sys;
    sys.a = rand_tensor({a.n_state}, -1.0, -0.1);
    sys.B = rand_tensor({a.n_state, 1}, -1.0, 1.0);
    sys.C = rand_tensor({1, a.n_state}, -1.0, 1.0);
    sys.delta = 0.1f;
    ssm::DiscreteSsm<float> disc = ssm::discretize(sys);

    const std::size_t d = 4, rank = 2;
    ssm::SelectiveParams<float> sel;
    sel.w_dt_low = rand_tensor({rank, d}, -0.5, 0.5);
    sel.w_dt_up = rand_tensor({d, rank}, -0.5, 0.5);
    sel.b_dt = rand_tensor({d}, -0.5, 0.5);
    sel.w_B = rand_tensor({a.n_state, d}, -0.5, 0.5);
    sel.b_B = rand_tensor({a.n_state}, -0.5, 0.5);
    sel.w_C = rand_tensor({a.n_state, d}, -0.5, 0.5);
    sel.b_C = rand_tensor({a.n_state}, -0.5, 0.5);
    Tensor<float> neg_a = rand_tensor({a.n_state}, -1.0, -0.1);

    std::string csv = "mode,L,seconds\n";
    std::istringstream modes(a.modes);
    std::string mode;
    while (std::getline(modes, mode, ',')) {
        for (std::size_t L : a.lengths) {
            double sec = 0;
            if (mode == "recurrent" || mode == "kernel") {
                Tensor<float> x = rand_tensor({L, 1}, -1.0, 1.0);
                if (mode == "recurrent")
                    sec = median_seconds([&] { ssm::scan_recurrent(disc, x); });
                else
                    sec = median_seconds([&] { ssm::scan_kernel(disc, x); });
            } else if (mode == "ss2d") {
                const std::size_t H = 32;
                if (L % H != 0)
                    throw ConfigError("ss2d bench requires lengths divisible by 32");
                Tensor<float> grid = rand_tensor({H, L / H, d}, -1.0, 1.0);
                std::array<const ssm::SelectiveParams<float>*, 4> ps{&sel, &sel, &sel, &sel};
                sec = median_seconds([&] { ss2d::ss2d_forward(grid, ps, neg_a); });
            } else {
                throw ConfigError("unknown bench mode '" + mode +
                                  "' (expected recurrent|kernel|ss2d)");
            }
            char line[96];
            std::snprintf(line, sizeof line, "%s,%zu,%.9f\n", mode.c_str(), L, sec);
            csv += line;
            std::fputs(line, stderr);
        }
    }
    if (a.out.empty())
        std::fputs(csv.c_str(), stdout);
    else
        write_file(a.out, csv);
    return 0;
}

// Registers the flags shared by train/eval that feed the settings overlay.
void add_override_flags(CLI::App* cmd, RunArgs& args,
                        std::map<std::string, std::string>& raw) {
    static const std::vector<std::tuple<const char*, const char*, const char*>> kFlags = {
        {"--seed", "seed", "run seed (shuffle, dropout, split)"},
        {"--task", "task", "label|birads|multi"},
        {"--backbone", "backbone", "cnn|vssm|hybrid"},
        {"--binding", "binding", "shared|view-specific"},
        {"--birads-set", "birads_set", "active assessment grades: 15|135|12345"},
        {"--image-size", "image_size", "model input side length"},
        {"--lr", "lr", "learning rate (default per backbone)"},
        {"--batch-size", "batch_size", "studies per step"},
        {"--epochs", "max_epochs", "epoch budget"},
        {"--feature-dim", "feature_dim", "per-view feature length"},
        {"--stem-channels", "stem_channels", "conv stem width"},
        {"--embed-channels", "embed_channels", "patchify width (vssm backbone)"},
        {"--n-state", "n_state", "SSM state size per channel"},
        {"--dt-rank", "dt_rank", "timescale projection rank"},
        {"--dropout", "dropout", "fusion dropout probability"},
        {"--init-seed", "init_seed", "parameter init seed (default: seed)"},
        {"--train-fraction", "train_fraction", "train split fraction"},
        {"--stop-at-score", "stop_at_score", "stop when the combined score reaches this"},
    };
    for (const auto& [flag, key, help] : kFlags) {
        const std::string key_copy = key;
        cmd->add_option_function<std::string>(
            flag, [&raw, key_copy](const std::string& v) { raw[key_copy] = v; }, help);
    }
    cmd->parse_complete_callback([&args, &raw] {
        for (const auto& [k, v] : raw) args.overrides.set(k, v);
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"four-view multi-task mammography classifier (hybrid conv/state-space)"};
    app.require_subcommand(1);

    std::string simd_backend = "auto";
    app.add_option("--simd", simd_backend, "kernel backend: auto|scalar|avx2")
        ->capture_default_str();

    SynthArgs synth;
    auto* csynth = app.add_subcommand("synth", "generate a synthetic dataset");
    csynth->add_option("--out", synth.out, "output directory")->required();
    csynth->add_option("--n", synth.n, "number of studies")->capture_default_str();
    csynth->add_option("--size", synth.size, "image side length")->capture_default_str();
    csynth->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
    csynth->add_option("--birads-set", synth.birads_set, "grade set: 15|135|12345")
        ->capture_default_str();
    csynth->add_option("--missing-prob", synth.missing_prob, "P(one side absent)")
        ->capture_default_str();
    csynth->add_option("--divergence-prob", synth.divergence_prob,
                       "P(label contradicts a middle grade)")
        ->capture_default_str();

    RunArgs train_args;
    std::map<std::string, std::string> train_raw;
    auto* ctrain = app.add_subcommand("train", "train a model");
    ctrain->add_option("--data", train_args.data, "dataset directory (manifest.csv)")
        ->required();
    ctrain->add_option("--out", train_args.out, "output directory")->capture_default_str();
    ctrain->add_option("--config", train_args.config_path, "settings file (key = value)");
    add_override_flags(ctrain, train_args, train_raw);

    RunArgs eval_args;
    std::map<std::string, std::string> eval_raw;
    auto* ceval = app.add_subcommand("eval", "evaluate a checkpoint");
    ceval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
    ceval->add_option("--data", eval_args.data, "dataset directory (manifest.csv)")
        ->required();
    ceval->add_option("--out", eval_args.out, "output directory")->capture_default_str();
    add_override_flags(ceval, eval_args, eval_raw);

    GradcheckArgs gc;
    auto* cgrad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    cgrad->add_option("--mode", gc.mode, "fusion-head|full|both")->capture_default_str();
    cgrad->add_option("--seed", gc.seed, "verification seed")->capture_default_str();

    BenchArgs bench;
    auto* cbench = app.add_subcommand("bench", "scan timing table (CSV: mode,L,seconds)");
    cbench->add_option("--out", bench.out, "CSV path (default: stdout)");
    cbench->add_option("--modes", bench.modes, "comma list: recurrent,kernel,ss2d")
        ->capture_default_str();
    cbench->add_option("--lengths", bench.lengths, "sequence lengths")->capture_default_str();
    cbench->add_option("--n-state", bench.n_state, "state dimension")->capture_default_str();
    cbench->add_option("--seed", bench.seed, "input seed")->capture_default_str();

    try {
        app.parse(argc, argv);
        simd::set_backend(simd::parse_backend(simd_backend));
        if (csynth->parsed()) return run_synth(synth);
        if (ctrain->parsed()) return run_train(train_args);
        if (ceval->parsed()) return run_eval(eval_args);
        if (cgrad->parsed()) return run_gradcheck(gc);
        if (cbench->parsed()) return run_bench(bench);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
