// cosy: toy corpus generation, training, evaluation, rendering, PCA export
// and the editing server behind one binary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "cosy/checkpoint.hpp"
#include "cosy/config.hpp"
#include "cosy/error.hpp"
#include "cosy/evalkit.hpp"
#include "cosy/png.hpp"
#include "cosy/service.hpp"
#include "cosy/splat_io.hpp"
#include "cosy/trainer.hpp"

namespace fs = std::filesystem;
using namespace cosy;

namespace {

int exit_code(ErrorCode c) {
    switch (c) {
        case ErrorCode::ConfigError:
        case ErrorCode::BadEdit:
            return 2;
        case ErrorCode::NonFiniteLoss:
        case ErrorCode::NonFiniteFeatures:
            return 4;
        default:
            return 3;
    }
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "--set expects key=value, got " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

DatasetConfig dataset_for(const Checkpoint& ckpt, const std::string& data_dir) {
    auto d = ckpt.config.dataset();
    d.corpus_dir = data_dir;
    return d;
}

// Desk-FID of the EMA generator against a fixed real feature set.
struct FidProbe {
    FeatureFn features = default_features(PerceptualExtractor());
    std::optional<Eigen::MatrixXd> real;
    static constexpr std::uint64_t kRealSeed = 0xf1d0;
    static constexpr std::uint64_t kFakeSeed = 0xf1d1;

    double operator()(Trainer& t) {
        const int n = static_cast<int>(t.config().get_int("train.fid_samples"));
        if (!real) real = real_features(t.config().dataset(), n, kRealSeed, features);
        DatasetIterator data(t.config().dataset());
        return frechet_distance(*real, fake_features(t.generator_ema(), data, n, FidMode::Fid, 1.0, kFakeSeed, features));
    }
};

void write_report(const fs::path& out, const std::string& metric, double value, int n, std::uint64_t seed,
                  const Checkpoint& ckpt) {
    std::ofstream os(out);
    if (!os) throw Error(ErrorCode::DataError, "cannot write " + out.string());
    os << "metric,value,n,seed,step,config_digest\n";
    char line[256];
    std::snprintf(line, sizeof line, "%s,%.9g,%d,%llu,%llu,%s\n", metric.c_str(), value, n,
                  static_cast<unsigned long long>(seed), static_cast<unsigned long long>(ckpt.step),
                  hex64(ckpt.config.digest()).c_str());
    os << line;
    std::cerr << metric << " = " << value << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Compositional Gaussian splatting GAN on toy heads.\n\n" + config_help()};
    app.require_subcommand(1);

    // toyset gen
    auto* toyset = app.add_subcommand("toyset", "toy corpus tools");
    toyset->require_subcommand(1);
    auto* gen = toyset->add_subcommand("gen", "write a procedural toy corpus");
    int gen_n = 20000;
    std::uint64_t gen_seed = 7;
    int gen_res = 64;
    std::string gen_out;
    gen->add_option("--n", gen_n, "number of samples")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--resolution", gen_res, "image side in pixels")->check(CLI::PositiveNumber);
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train a generator");
    std::string train_config, train_out, train_resume;
    std::vector<std::string> train_sets;
    std::optional<std::int64_t> train_seed;
    bool train_no_fid = false;
    train->add_option("--config", train_config, "key = value config file");
    train->add_option("--set", train_sets, "override, key=value (repeatable)");
    train->add_option("--seed", train_seed, "shorthand for --set seed=N");
    train->add_option("--out", train_out, "run directory")->required();
    train->add_option("--resume", train_resume, "checkpoint to continue from");
    train->add_flag("--no-fid", train_no_fid, "skip the periodic desk-FID");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluation protocols");
    std::string eval_mode, eval_ckpt, eval_data, eval_out = "report.csv", eval_parser, eval_edit = "hair",
                                                 eval_masks = "parser";
    std::optional<int> eval_n;
    std::uint64_t eval_seed = 1;
    std::optional<double> eval_psi;
    int eval_k = 0;
    std::string eval_component = "hair";
    eval->add_option("mode", eval_mode, "fid | fid3d | fidmix | stability | recall | pca | light")
        ->required()
        ->check(CLI::IsMember({"fid", "fid3d", "fidmix", "stability", "recall", "pca", "light"}));
    eval->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
    eval->add_option("--data", eval_data, "corpus directory (empty: procedural stream)");
    eval->add_option("--out", eval_out, "report CSV");
    eval->add_option("--n", eval_n, "samples / pairs");
    eval->add_option("--seed", eval_seed, "evaluation seed");
    eval->add_option("--psi", eval_psi, "truncation");
    eval->add_option("--parser", eval_parser, "parser weights for stability masks");
    eval->add_option("--edit", eval_edit, "stability edit: hair | glasses");
    eval->add_option("--masks", eval_masks, "stability masks: parser | attribution")
        ->check(CLI::IsMember({"parser", "attribution"}));
    eval->add_option("--component", eval_component, "pca component");
    eval->add_option("--k", eval_k, "pca directions (default eval.pca_k)");

    // render
    auto* render = app.add_subcommand("render", "render one sample to PNG");
    std::string render_ckpt, render_out, render_splat;
    std::uint64_t render_seed = 0;
    double render_yaw = 0, render_pitch = 0, render_psi = 0.8;
    int render_res = 0;
    bool render_glasses = false;
    render->add_option("--ckpt", render_ckpt, "checkpoint")->required();
    render->add_option("--seed", render_seed, "latent seed");
    render->add_option("--yaw", render_yaw, "degrees");
    render->add_option("--pitch", render_pitch, "degrees");
    render->add_option("--psi", render_psi, "truncation");
    render->add_option("--resolution", render_res, "pixels (default data.resolution)");
    render->add_flag("--glasses", render_glasses, "switch glasses on");
    render->add_option("--out", render_out, "PNG path")->required();
    render->add_option("--splat", render_splat, "also write the scene as a splat file");

    // export-pca
    auto* export_pca = app.add_subcommand("export-pca", "per-component PCA sidecar for the editor");
    std::string pca_ckpt, pca_out;
    std::optional<int> pca_k;
    std::optional<std::int64_t> pca_samples;
    std::uint64_t pca_seed = 1;
    export_pca->add_option("--ckpt", pca_ckpt, "checkpoint")->required();
    export_pca->add_option("--k", pca_k, "directions per component (default eval.pca_k)");
    export_pca->add_option("--samples", pca_samples, "latent samples (default eval.pca_samples)");
    export_pca->add_option("--seed", pca_seed, "sample seed");
    export_pca->add_option("--out", pca_out, "sidecar path (default <ckpt>.pca)");

    // train-parser
    auto* tparser = app.add_subcommand("train-parser", "train the region parser used for stability masks");
    int parser_steps = 1500, parser_batch = 16, parser_res = 64;
    std::uint64_t parser_seed = 11;
    std::string parser_out;
    tparser->add_option("--steps", parser_steps, "optimizer steps");
    tparser->add_option("--batch", parser_batch, "batch size");
    tparser->add_option("--resolution", parser_res, "image side");
    tparser->add_option("--seed", parser_seed, "sample seed");
    tparser->add_option("--out", parser_out, "weights path")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP + WebSocket editing server");
    std::string serve_ckpt, serve_addr, serve_config;
    std::vector<std::string> serve_sets;
    serve->add_option("--ckpt", serve_ckpt, "checkpoint (relative to serve.checkpoint_dir)")->required();
    serve->add_option("--addr", serve_addr, "host:port (default serve.addr)");
    serve->add_option("--config", serve_config, "key = value config file for serve.* keys");
    serve->add_option("--set", serve_sets, "override, key=value (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        torch::set_num_threads(1);
        if (*gen) {
            DatasetConfig cfg;
            cfg.resolution = gen_res;
            ToyCorpus::write(gen_out, gen_seed, gen_n, cfg, [&](int i) {
                if ((i + 1) % 1000 == 0) std::cerr << "toyset: " << (i + 1) << "/" << gen_n << "\n";
            });
            return 0;
        }
        if (*train) {
            std::unique_ptr<Trainer> trainer;
            if (!train_resume.empty()) {
                if (!train_config.empty() || !train_sets.empty() || train_seed) {
                    throw Error(ErrorCode::ConfigError, "--resume takes its configuration from the checkpoint");
                }
                trainer = Trainer::resume(load_checkpoint(train_resume));
            } else {
                RunConfig cfg;
                if (!train_config.empty()) cfg.merge_file(train_config);
                apply_overrides(cfg, train_sets);
                if (train_seed) cfg.set("seed", std::to_string(*train_seed));
                cfg.validate();
                trainer = std::make_unique<Trainer>(cfg);
            }
            std::cerr << "train: " << trainer->generator()->cfg.describe() << " config " << hex64(trainer->config().digest())
                      << "\n";
            FidProbe probe;
            TrainHooks hooks;
            const auto log_every = trainer->config().get_int("train.log_every");
            hooks.on_step = [&](const StepScalars& s) {
                if (s.step % log_every == 0) {
                    std::fprintf(stderr, "step %lld d %.4f g %.4f r1 %.4f light %.4f ema %.5f\n",
                                 static_cast<long long>(s.step), s.d_loss, s.g_adv, s.r1, s.light_distance, s.g_ema);
                }
            };
            if (!train_no_fid) hooks.fid = [&](Trainer& t) { return probe(t); };
            run_training(*trainer, train_out, hooks);
            return 0;
        }
        if (*eval) {
            const auto ckpt = load_checkpoint(eval_ckpt);
            auto g = generator_from_checkpoint(ckpt);
            const auto data_cfg = dataset_for(ckpt, eval_data);
            DatasetIterator data(data_cfg);
            const double psi = eval_psi.value_or(ckpt.config.get_float("eval.psi"));
            const int n = eval_n.value_or(static_cast<int>(ckpt.config.get_int("eval.samples")));
            PerceptualExtractor percep;
            if (eval_mode == "fid" || eval_mode == "fid3d" || eval_mode == "fidmix") {
                const auto features = default_features(percep);
                const auto real = real_features(data_cfg, n, eval_seed, features);
                const auto fake = fake_features(g, data, n, fid_mode_from_name(eval_mode), psi, eval_seed + 1, features);
                write_report(eval_out, eval_mode, frechet_distance(real, fake), n, eval_seed, ckpt);
            } else if (eval_mode == "stability") {
                StabilityOptions opt;
                opt.edit = edit_kind_from_name(eval_edit);
                opt.masks = eval_masks == "parser" ? MaskSource::Parser : MaskSource::Attribution;
                opt.pairs = n;
                opt.psi = psi;
                opt.seed = eval_seed;
                ToyParser parser;
                if (opt.masks == MaskSource::Parser) {
                    if (eval_parser.empty()) throw Error(ErrorCode::ConfigError, "--parser is required for parser masks");
                    load_parser(eval_parser, parser);
                }
                write_report(eval_out, "stability_" + eval_edit, edit_stability(g, data, percep, &parser, opt), n,
                             eval_seed, ckpt);
            } else if (eval_mode == "recall") {
                write_report(eval_out, "glasses_recall", glasses_recall(g, data, n, psi, eval_seed, GlassesDetector{}), n,
                             eval_seed, ckpt);
            } else if (eval_mode == "light") {
                write_report(eval_out, "light_distance", light_distance(g, data, percep, n, eval_seed), n, eval_seed, ckpt);
            } else {
                const int k = eval_k > 0 ? eval_k : static_cast<int>(ckpt.config.get_int("eval.pca_k"));
                const auto c = component_from_name(eval_component);
                const auto samples = ckpt.config.get_int("eval.pca_samples");
                const auto res = pca_directions(g, c, samples, k, eval_seed);
                std::ofstream os(eval_out);
                os << "component,index,variance\n";
                for (int i = 0; i < k; ++i) os << eval_component << "," << i << "," << res.variances[i] << "\n";
            }
            return 0;
        }
        if (*render) {
            const auto ckpt = load_checkpoint(render_ckpt);
            auto g = generator_from_checkpoint(ckpt);
            const int res = render_res > 0 ? render_res : static_cast<int>(ckpt.config.get_int("data.resolution"));
            DatasetIterator data(ckpt.config.dataset());
            std::mt19937_64 rng(render_seed);
            auto labels = data.sample_labels(rng);
            labels.glasses_flag = render_glasses ? 1.0f : 0.0f;
            const auto bundle = LatentBundle::sample(1, g->cfg.z_dim, rng);
            torch::NoGradGuard ng;
            const auto out = g->synthesize(bundle, ConditioningBatch::from({labels}), render_psi);
            const auto img = render_no_grad(out.scene, {toy_camera(render_yaw, render_pitch, res)})[0]
                                 .permute({1, 2, 0})
                                 .contiguous();
            write_file(render_out, encode_png({img.data_ptr<float>(), static_cast<std::size_t>(img.numel())}, res, res));
            if (!render_splat.empty()) {
                std::array<GaussianSet, 4> sets;
                for (auto c : kComponents) sets[index_of(c)] = to_gaussian_set(c, out.components[index_of(c)][0]);
                write_file(render_splat, encode_splat(compose(sets[0], sets[1], sets[2], sets[3], render_glasses)));
            }
            return 0;
        }
        if (*export_pca) {
            const auto bytes = read_file(pca_ckpt);
            const auto ckpt = decode_checkpoint(bytes);
            auto g = generator_from_checkpoint(ckpt);
            const int k = pca_k.value_or(static_cast<int>(ckpt.config.get_int("eval.pca_k")));
            const auto samples = pca_samples.value_or(ckpt.config.get_int("eval.pca_samples"));
            PcaSidecar side;
            side.checkpoint_digest = fnv1a64(bytes);
            for (auto c : kComponents) side.components[index_of(c)] = pca_directions(g, c, samples, k, pca_seed);
            write_file(pca_out.empty() ? pca_ckpt + ".pca" : pca_out, encode_pca_sidecar(side));
            return 0;
        }
        if (*tparser) {
            DatasetConfig cfg;
            cfg.resolution = parser_res;
            ToyParser parser;
            torch::manual_seed(parser_seed);
            const auto rep = train_parser(parser, cfg, parser_steps, parser_batch, parser_seed);
            save_parser(parser_out, parser);
            std::fprintf(stderr, "parser: train accuracy %.4f holdout %.4f\n", rep.train_accuracy, rep.holdout_accuracy);
            return 0;
        }
        if (*serve) {
            RunConfig cfg;
            if (!serve_config.empty()) cfg.merge_file(serve_config);
            apply_overrides(cfg, serve_sets);
            ServiceOptions opt = ServiceOptions::from(cfg);
            if (!serve_addr.empty()) opt.addr = serve_addr;
            EditService service(opt);
            service.load_checkpoint(serve_ckpt);
            std::cerr << "serve: listening on " << opt.addr << "\n";
            Server server(service, opt.addr);
            server.run();
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
