#include "cosy/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <iostream>

#include "cosy/error.hpp"
#include "cosy/splat_io.hpp"
#include "cosy/torch_raster.hpp"

namespace cosy {

namespace {

namespace F = torch::nn::functional;

std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step), 0x7a11u};
    return std::mt19937_64(seq);
}

double grad_norm(const std::vector<torch::Tensor>& params) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (p.grad().defined()) sq += p.grad().to(torch::kFloat64).square().sum().item<double>();
    }
    return std::sqrt(sq);
}

void set_requires_grad(torch::nn::Module& m, bool on) {
    for (auto& p : m.parameters()) p.set_requires_grad(on);
}

torch::Tensor images_to_tensor(const std::vector<const std::vector<float>*>& images, int res) {
    auto t = torch::empty({static_cast<int64_t>(images.size()), res, res, 3});
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::memcpy(t[i].data_ptr<float>(), images[i]->data(), images[i]->size() * sizeof(float));
    }
    return t.permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor cond_tensor(const std::vector<std::array<float, kConditioningDim>>& rows) {
    auto t = torch::empty({static_cast<int64_t>(rows.size()), kConditioningDim});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::memcpy(t[i].data_ptr<float>(), rows[i].data(), kConditioningDim * sizeof(float));
    }
    return t;
}

using AdamState = torch::optim::AdamParamState;

// Adam keeps a step count per parameter: parameters without a gradient in
// some step (R1 passes skip a few) fall behind the others.
void append_adam(TensorTable& table, const std::string& prefix, const torch::optim::Adam& opt) {
    const auto& params = opt.param_groups().front().params();
    auto& state = const_cast<torch::optim::Adam&>(opt).state();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto it = state.find(params[i].unsafeGetTensorImpl());
        if (it == state.end()) continue;
        const auto& s = static_cast<const AdamState&>(*it->second);
        const std::string key = prefix + std::to_string(i);
        table.emplace_back(key + ".m", s.exp_avg().clone());
        table.emplace_back(key + ".v", s.exp_avg_sq().clone());
        table.emplace_back(key + ".step", torch::tensor({static_cast<float>(s.step())}));
    }
}

void restore_adam(const Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt) {
    const auto& params = opt.param_groups().front().params();
    opt.state().clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string key = prefix + std::to_string(i);
        if (!ckpt.has(key + ".m")) continue;
        auto s = std::make_unique<AdamState>();
        s->step(static_cast<int64_t>(ckpt.get(key + ".step").item<float>()));
        s->exp_avg(ckpt.get(key + ".m").clone());
        s->exp_avg_sq(ckpt.get(key + ".v").clone());
        if (s->exp_avg().sizes() != params[i].sizes()) {
            throw Error(ErrorCode::CheckpointInvalid, "optimizer state shape mismatch at " + key);
        }
        opt.state()[params[i].unsafeGetTensorImpl()] = std::move(s);
    }
}

}  // namespace

TrainConfig TrainConfig::from(const RunConfig& cfg) {
    TrainConfig t;
    t.steps = cfg.get_int("train.steps");
    t.batch = cfg.get_int("train.batch");
    t.g_lr = cfg.get_float("train.g_lr");
    t.d_lr = cfg.get_float("train.d_lr");
    t.beta1 = cfg.get_float("train.beta1");
    t.beta2 = cfg.get_float("train.beta2");
    t.r1_weight = cfg.get_float("train.r1_weight");
    t.r1_interval = cfg.get_int("train.r1_interval");
    t.mixing_prob = cfg.get_float("train.mixing_prob");
    t.light_reg_weight = cfg.get_float("train.light_reg_weight");
    t.light_target = cfg.get_float("train.light_target");
    t.light_batch = cfg.get_int("train.light_batch");
    t.ema_geom_weight = cfg.get_float("train.ema_geom_weight");
    t.ema_decay = cfg.get_float("train.ema_decay");
    t.g_ema_decay = cfg.get_float("train.g_ema_decay");
    t.w_mean_decay = cfg.get_float("train.w_mean_decay");
    return t;
}

MixResult mix_latents(const LatentBundle& bundle, double p, std::mt19937_64& rng) {
    MixResult out{bundle.clone(), std::vector<int>(bundle.batch(), -1)};
    std::bernoulli_distribution coin(p);
    std::uniform_int_distribution<int> pick(0, 3);
    const int64_t dim = bundle.z_shape.size(1);
    for (int64_t i = 0; i < bundle.batch(); ++i) {
        if (!coin(rng)) continue;
        const int c = pick(rng);
        out.bundle.z[c][i].copy_(randn_from(rng, 1, dim)[0]);
        out.mixed[i] = c;
    }
    return out;
}

void resample_mixed_labels(std::vector<ColorConditioning>& labels, const std::vector<int>& mixed,
                           DatasetIterator& data, double glasses_rate, std::mt19937_64& rng) {
    std::bernoulli_distribution flag(glasses_rate);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (mixed[i] < 0) continue;
        switch (static_cast<Component>(mixed[i])) {
            case Component::Face: labels[i].skin = data.sample_region_label(Region::Skin, rng); break;
            case Component::Hair: labels[i].hair = data.sample_region_label(Region::Hair, rng); break;
            case Component::Torso: labels[i].torso = data.sample_region_label(Region::Torso, rng); break;
            case Component::Glasses: labels[i].glasses_flag = flag(rng) ? 1.0f : 0.0f; break;
        }
    }
}

torch::Tensor render_images(const torch::Tensor& scene, const std::vector<Camera>& cameras) {
    // The rasterizer composites over its (white) background already.
    return render_batch(scene, cameras).rgb;
}

LightLoss light_consistency_loss(Generator& g, PerceptualExtractor& percep, const LatentBundle& bundle,
                                 const ConditioningBatch& cond, const std::vector<Camera>& cameras,
                                 double target, std::mt19937_64& rng) {
    LatentBundle other = bundle.clone();
    other.z_light = randn_from(rng, bundle.batch(), bundle.z_light.size(1));
    const auto a = render_images(g->synthesize(bundle, cond).scene, cameras);
    const auto b = render_images(g->synthesize(other, cond).scene, cameras);
    const auto d = percep->distance(a, b);
    LightLoss out;
    out.loss = torch::relu(d - target).square().mean();
    out.mean_distance = d.detach().mean().item<double>();
    return out;
}

torch::Tensor ema_geometry_loss(const torch::Tensor& face, const EmaFaceGeometry& ema) {
    if (!ema.initialized) return torch::zeros({});
    if (face.size(1) != ema.xyz.size(0)) {
        throw Error(ErrorCode::LengthMismatch, "face primitive count changed");
    }
    const auto xyz = face.narrow(2, attr::Position, 3);
    const auto opacity = torch::sigmoid(face.select(2, attr::Opacity));
    const auto sq = (xyz - ema.xyz).square().sum({1, 2}) + (opacity - ema.opacity).square().sum(1);
    return (sq / (4.0 * face.size(1))).mean();
}

void ema_geometry_update(const torch::Tensor& face, EmaFaceGeometry& ema, double decay) {
    torch::NoGradGuard ng;
    const auto f = face.detach();
    const auto xyz = f.narrow(2, attr::Position, 3).mean(0);
    const auto opacity = torch::sigmoid(f.select(2, attr::Opacity)).mean(0);
    if (!ema.initialized) {
        ema.xyz = xyz.clone();
        ema.opacity = opacity.clone();
        ema.initialized = true;
        return;
    }
    if (xyz.size(0) != ema.xyz.size(0)) throw Error(ErrorCode::LengthMismatch, "face primitive count changed");
    ema.xyz = decay * ema.xyz + (1.0 - decay) * xyz;
    ema.opacity = decay * ema.opacity + (1.0 - decay) * opacity;
}

Trainer::Trainer(const RunConfig& cfg) : cfg_(cfg), tc_(TrainConfig::from(cfg)) {
    cfg_.validate();
    torch::set_num_threads(static_cast<int>(cfg_.get_int("threads")));
    const auto seed = static_cast<std::uint64_t>(cfg_.get_int("seed"));
    torch::manual_seed(seed);
    g_ = Generator(cfg_.generator());
    torch::manual_seed(seed);
    g_ema_ = Generator(cfg_.generator());
    copy_weights(*g_ema_, *g_);
    set_requires_grad(*g_ema_, false);
    torch::manual_seed(seed + 1);
    d_ = Discriminator(cfg_.discriminator());
    percep_ = PerceptualExtractor();
    opt_g_ = std::make_unique<torch::optim::Adam>(
        g_->parameters(), torch::optim::AdamOptions(tc_.g_lr).betas({tc_.beta1, tc_.beta2}).eps(1e-8));
    opt_d_ = std::make_unique<torch::optim::Adam>(
        d_->parameters(), torch::optim::AdamOptions(tc_.d_lr).betas({tc_.beta1, tc_.beta2}).eps(1e-8));
    data_ = std::make_unique<DatasetIterator>(cfg_.dataset());
    if (data_->config().resolution != cfg_.get_int("data.resolution")) {
        throw Error(ErrorCode::DataError, "corpus resolution differs from data.resolution");
    }
}

std::unique_ptr<Trainer> Trainer::resume(const Checkpoint& ckpt) {
    auto t = std::make_unique<Trainer>(ckpt.config);
    t->restore(ckpt);
    return t;
}

void Trainer::restore(const Checkpoint& ckpt) {
    restore_module(ckpt, "G.", *g_);
    restore_module(ckpt, "G_ema.", *g_ema_);
    restore_module(ckpt, "D.", *d_);
    restore_adam(ckpt, "optG.", *opt_g_);
    restore_adam(ckpt, "optD.", *opt_d_);
    if (ckpt.has("ema.xyz")) {
        ema_.xyz = ckpt.get("ema.xyz").clone();
        ema_.opacity = ckpt.get("ema.opacity").clone();
        ema_.initialized = true;
    }
    step_ = static_cast<std::int64_t>(ckpt.step);
    data_->seek(ckpt.data_position);
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    c.step = static_cast<std::uint64_t>(step_);
    c.data_position = data_->position();
    append_module(c.tensors, "G.", *g_);
    append_module(c.tensors, "G_ema.", *g_ema_);
    append_module(c.tensors, "D.", *d_);
    append_adam(c.tensors, "optG.", *opt_g_);
    append_adam(c.tensors, "optD.", *opt_d_);
    if (ema_.initialized) {
        c.tensors.emplace_back("ema.xyz", ema_.xyz.clone());
        c.tensors.emplace_back("ema.opacity", ema_.opacity.clone());
    }
    return c;
}

Trainer::RealBatch Trainer::real_batch() {
    RealBatch r;
    std::vector<DatasetItem> items;
    items.reserve(tc_.batch);
    for (int64_t i = 0; i < tc_.batch; ++i) items.push_back(data_->next());
    std::vector<const std::vector<float>*> images;
    std::vector<std::array<float, kConditioningDim>> rows;
    for (const auto& it : items) {
        images.push_back(&it.image);
        rows.push_back(it.conditioning());
        r.labels.push_back(it.labels);
    }
    r.images = images_to_tensor(images, data_->config().resolution);
    r.cond = cond_tensor(rows);
    return r;
}

Trainer::FakeBatch Trainer::fake_batch(const std::vector<ColorConditioning>& real_labels, double mixing_prob,
                                       std::mt19937_64& rng) {
    FakeBatch f;
    const auto n = static_cast<int64_t>(real_labels.size());
    // The monolithic baseline has no components to mix.
    const double p = g_->cfg.monolithic ? 0.0 : mixing_prob;
    auto mix = mix_latents(LatentBundle::sample(n, cfg_.get_int("model.z_dim"), rng), p, rng);
    f.bundle = std::move(mix.bundle);
    f.mixed = std::move(mix.mixed);
    for (int64_t i = 0; i < n; ++i) f.labels.push_back(real_labels[(i + 1) % n]);
    resample_mixed_labels(f.labels, f.mixed, *data_, data_->config().palette.glasses_rate, rng);
    std::vector<std::array<float, kConditioningDim>> rows;
    for (int64_t i = 0; i < n; ++i) {
        f.cameras.push_back(data_->sample_camera(rng));
        rows.push_back(conditioning_vector(f.cameras.back(), f.labels[i]));
    }
    f.cond = ConditioningBatch::from(f.labels);
    f.cond_vec = cond_tensor(rows);
    return f;
}

void Trainer::apply_r1(const torch::Tensor& real, const torch::Tensor& cond, StepScalars& s) {
    auto x = real.detach().requires_grad_(true);
    const auto logits = d_->forward(x, cond);
    const auto grad = torch::autograd::grad({logits.sum()}, {x}, {}, true, true)[0];
    const auto penalty = grad.square().sum({1, 2, 3}).mean();
    const auto loss = penalty * (0.5 * tc_.r1_weight * static_cast<double>(tc_.r1_interval));
    opt_d_->zero_grad();
    loss.backward();
    opt_d_->step();
    s.r1 = penalty.item<double>();
}

StepScalars Trainer::step() {
    StepScalars s;
    s.step = step_;
    auto rng = step_rng(static_cast<std::uint64_t>(cfg_.get_int("seed")), step_);
    const auto real = real_batch();

    // Discriminator.
    set_requires_grad(*d_, true);
    {
        const auto fake = fake_batch(real.labels, tc_.mixing_prob, rng);
        torch::Tensor fake_img;
        {
            torch::NoGradGuard ng;
            fake_img = render_images(g_->synthesize(fake.bundle, fake.cond).scene, fake.cameras);
        }
        const auto lf = d_->forward(fake_img, fake.cond_vec);
        const auto lr = d_->forward(real.images, real.cond);
        const auto loss = F::softplus(lf).mean() + F::softplus(-lr).mean();
        opt_d_->zero_grad();
        loss.backward();
        s.d_grad_norm = grad_norm(d_->parameters());
        opt_d_->step();
        s.d_loss = loss.item<double>();
        s.d_fake = lf.mean().item<double>();
        s.d_real = lr.mean().item<double>();
    }
    if (tc_.r1_weight > 0.0 && step_ % tc_.r1_interval == 0) apply_r1(real.images, real.cond, s);

    // Generator.
    set_requires_grad(*d_, false);
    const auto fake = fake_batch(real.labels, tc_.mixing_prob, rng);
    const auto out = g_->synthesize(fake.bundle, fake.cond);
    const auto img = render_images(out.scene, fake.cameras);
    const auto adv = F::softplus(-d_->forward(img, fake.cond_vec)).mean();
    auto total = adv;
    s.g_adv = adv.item<double>();
    if (tc_.light_reg_weight > 0.0 && !g_->cfg.monolithic) {
        const int64_t k = std::min<int64_t>(tc_.light_batch, fake.bundle.batch());
        LatentBundle sub;
        for (int c = 0; c < 4; ++c) sub.z[c] = fake.bundle.z[c].narrow(0, 0, k);
        sub.z_shape = fake.bundle.z_shape.narrow(0, 0, k);
        sub.z_light = fake.bundle.z_light.narrow(0, 0, k);
        const std::vector<ColorConditioning> labels(fake.labels.begin(), fake.labels.begin() + k);
        const std::vector<Camera> cams(fake.cameras.begin(), fake.cameras.begin() + k);
        const auto light = light_consistency_loss(g_, percep_, sub, ConditioningBatch::from(labels), cams,
                                                  tc_.light_target, rng);
        total = total + tc_.light_reg_weight * light.loss;
        s.g_light = light.loss.item<double>();
        s.light_distance = light.mean_distance;
    }
    const auto face = out.components[index_of(Component::Face)];
    if (tc_.ema_geom_weight > 0.0) {
        const auto ema_loss = ema_geometry_loss(face, ema_);
        total = total + tc_.ema_geom_weight * ema_loss;
        s.g_ema = ema_loss.item<double>();
    }
    opt_g_->zero_grad();
    total.backward();
    s.g_grad_norm = grad_norm(g_->parameters());
    opt_g_->step();
    s.g_total = total.item<double>();

    if (tc_.ema_geom_weight > 0.0) ema_geometry_update(face, ema_, tc_.ema_decay);
    g_->update_w_mean(out.latents, tc_.w_mean_decay);
    // Warm-up so the weight average is not dominated by the initialization.
    const double beta = std::min(tc_.g_ema_decay, (1.0 + step_) / (10.0 + step_));
    ema_update(*g_ema_, *g_, beta);

    int mixed = 0;
    for (int m : fake.mixed) mixed += m >= 0;
    s.mixed_fraction = static_cast<double>(mixed) / static_cast<double>(fake.mixed.size());
    ++step_;
    return s;
}

void run_training(Trainer& trainer, const std::filesystem::path& out_dir, const TrainHooks& hooks) {
    std::filesystem::create_directories(out_dir);
    const auto& cfg = trainer.config();
    const auto total = trainer.train_config().steps;
    const auto log_every = cfg.get_int("train.log_every");
    const auto ckpt_every = cfg.get_int("train.checkpoint_every");
    const auto fid_every = cfg.get_int("train.fid_every");
    const bool fresh = trainer.current_step() == 0;

    std::ofstream metrics(out_dir / "metrics.csv", fresh ? std::ios::trunc : std::ios::app);
    std::ofstream fid_log(out_dir / "fid.csv", fresh ? std::ios::trunc : std::ios::app);
    if (fresh) {
        metrics << "step,d_loss,d_real,d_fake,r1,g_adv,g_light,g_ema,g_total,g_grad_norm,d_grad_norm,"
                   "light_distance,mixed_fraction,seconds\n";
        fid_log << "step,fid\n";
    }
    write_file(out_dir / "config.txt", cfg.canonical());

    const auto t0 = std::chrono::steady_clock::now();
    while (trainer.current_step() < total) {
        const auto s = trainer.step();
        const double vals[] = {s.d_loss, s.d_real, s.d_fake, s.r1, s.g_adv, s.g_light, s.g_ema, s.g_total,
                               s.g_grad_norm, s.d_grad_norm, s.light_distance};
        bool finite = true;
        for (double v : vals) finite = finite && std::isfinite(v);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto done = trainer.current_step();
        char line[512];
        std::snprintf(line, sizeof line, "%lld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.4g,%.1f\n",
                      static_cast<long long>(done), s.d_loss, s.d_real, s.d_fake, s.r1, s.g_adv, s.g_light, s.g_ema,
                      s.g_total, s.g_grad_norm, s.d_grad_norm, s.light_distance, s.mixed_fraction, secs);
        if (!finite) {
            write_file(out_dir / ("nonfinite_step" + std::to_string(done) + ".txt"),
                       "step,d_loss,d_real,d_fake,r1,g_adv,g_light,g_ema,g_total,g_grad_norm,d_grad_norm,"
                       "light_distance,mixed_fraction,seconds\n" +
                           std::string(line));
            save_checkpoint(out_dir / "nonfinite.ckpt", trainer.checkpoint());
            throw Error(ErrorCode::NonFiniteLoss, "non-finite scalar at step " + std::to_string(done));
        }
        if (done % log_every == 0 || done == total) {
            metrics << line;
            metrics.flush();
        }
        if (hooks.on_step) hooks.on_step(s);
        if (hooks.fid && fid_every > 0 && (done % fid_every == 0 || done == total)) {
            fid_log << done << "," << hooks.fid(trainer) << "\n";
            fid_log.flush();
        }
        if (done % ckpt_every == 0 || done == total) {
            const auto ckpt = trainer.checkpoint();
            save_checkpoint(out_dir / "latest.ckpt", ckpt);
        }
    }
}

}  // namespace cosy
