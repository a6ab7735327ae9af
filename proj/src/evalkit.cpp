#include "cosy/evalkit.hpp"

#include <cstring>

#include "cosy/checkpoint.hpp"
#include "cosy/error.hpp"
#include "cosy/torch_raster.hpp"
#include "cosy/trainer.hpp"

namespace cosy {

namespace {

namespace F = torch::nn::functional;

constexpr int kChunk = 16;

torch::Tensor item_images(const std::vector<DatasetItem>& items, int res) {
    auto t = torch::empty({static_cast<int64_t>(items.size()), res, res, 3});
    for (std::size_t i = 0; i < items.size(); ++i) {
        std::memcpy(t[i].data_ptr<float>(), items[i].image.data(), items[i].image.size() * sizeof(float));
    }
    return t.permute({0, 3, 1, 2}).contiguous();
}

Eigen::MatrixXd to_eigen(const torch::Tensor& rows) {
    const auto t = rows.to(torch::kFloat64).contiguous();
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.data_ptr<double>(), t.size(0), t.size(1));
}

void require_components(const Generator& g, const char* what) {
    if (g->cfg.monolithic) throw Error(ErrorCode::ConfigError, std::string(what) + " needs a component generator");
}

int region_class(EditKind e) {
    return static_cast<int>(e == EditKind::Hair ? Region::Hair : Region::Glasses);
}

// Composited weight of one component: render with that component white and
// everything else black.
torch::Tensor attribution(const torch::Tensor& scene, const std::array<int64_t, 4>& counts, Component c,
                          const std::vector<Camera>& cams) {
    auto s = scene.clone();
    int64_t begin = 0;
    for (int i = 0; i < index_of(c); ++i) begin += counts[i];
    s.narrow(2, attr::Color, 3).zero_();
    s.narrow(1, begin, counts[index_of(c)]).narrow(2, attr::Color, 3).fill_(1.0f);
    torch::NoGradGuard ng;
    return render_batch(s, cams).rgb.narrow(1, 0, 1);
}

}  // namespace

Generator generator_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
    Generator g(ckpt.config.generator());
    restore_module(ckpt, prefix, *g);
    g->eval();
    for (auto& p : g->parameters()) p.set_requires_grad(false);
    return g;
}

std::uint64_t checkpoint_content_digest(const Checkpoint& ckpt) { return fnv1a64(encode_checkpoint(ckpt)); }

FeatureFn default_features(PerceptualExtractor extractor) {
    return [extractor](const torch::Tensor& images) mutable {
        torch::NoGradGuard ng;
        return extractor->embed(images);
    };
}

Eigen::MatrixXd real_features(const DatasetConfig& data, int n, std::uint64_t seed, const FeatureFn& features) {
    DatasetConfig cfg = data;
    cfg.seed = seed;
    DatasetIterator it(cfg);
    std::vector<torch::Tensor> rows;
    for (int done = 0; done < n; done += kChunk) {
        std::vector<DatasetItem> items;
        for (int i = 0; i < std::min(kChunk, n - done); ++i) items.push_back(it.next());
        rows.push_back(features(item_images(items, it.config().resolution)));
    }
    return to_eigen(torch::cat(rows, 0));
}

FidMode fid_mode_from_name(const std::string& name) {
    if (name == "fid") return FidMode::Fid;
    if (name == "fid3d") return FidMode::Fid3d;
    if (name == "fidmix") return FidMode::FidMix;
    throw Error(ErrorCode::ConfigError, "unknown FID mode " + name);
}

torch::Tensor render_no_grad(const torch::Tensor& scene, const std::vector<Camera>& cameras) {
    torch::NoGradGuard ng;
    return render_images(scene, cameras);
}

Eigen::MatrixXd fake_features(Generator& g, DatasetIterator& data, int n, FidMode mode, double psi,
                              std::uint64_t seed, const FeatureFn& features) {
    if (mode == FidMode::FidMix) require_components(g, "FID_Mix");
    torch::NoGradGuard ng;
    std::mt19937_64 rng(seed);
    std::vector<torch::Tensor> rows;
    for (int done = 0; done < n; done += kChunk) {
        const int b = std::min(kChunk, n - done);
        std::vector<ColorConditioning> labels;
        for (int i = 0; i < b; ++i) labels.push_back(data.sample_labels(rng));
        auto bundle = LatentBundle::sample(b, g->cfg.z_dim, rng);
        if (mode == FidMode::FidMix) {
            auto mix = mix_latents(bundle, 1.0, rng);
            bundle = std::move(mix.bundle);
            resample_mixed_labels(labels, mix.mixed, data, data.config().palette.glasses_rate, rng);
        }
        // The scene is fixed before any render camera is drawn.
        const auto scene = g->synthesize(bundle, ConditioningBatch::from(labels), psi).scene;
        std::vector<Camera> cams;
        for (int i = 0; i < b; ++i) cams.push_back(data.sample_camera(rng));
        rows.push_back(features(render_no_grad(scene, cams)));
    }
    return to_eigen(torch::cat(rows, 0));
}

ToyParserImpl::ToyParserImpl() {
    using namespace torch::nn;
    auto conv = [](int in, int out, int dil) {
        return Conv2d(Conv2dOptions(in, out, 3).padding(dil).dilation(dil));
    };
    net = register_module("net", Sequential(conv(5, 32, 1), ReLU(), conv(32, 32, 2), ReLU(), conv(32, 32, 4), ReLU(),
                                            conv(32, 32, 8), ReLU(), conv(32, 32, 1), ReLU(),
                                            Conv2d(Conv2dOptions(32, 5, 1))));
}

torch::Tensor ToyParserImpl::forward(const torch::Tensor& image) {
    const auto b = image.size(0), h = image.size(2), w = image.size(3);
    const auto ys = torch::linspace(-1, 1, h).view({1, 1, h, 1}).expand({b, 1, h, w});
    const auto xs = torch::linspace(-1, 1, w).view({1, 1, 1, w}).expand({b, 1, h, w});
    return net->forward(torch::cat({image, xs, ys}, 1));
}

torch::Tensor ToyParserImpl::predict(const torch::Tensor& image) {
    torch::NoGradGuard ng;
    return forward(image).argmax(1);
}

ParserReport train_parser(ToyParser& parser, const DatasetConfig& data, int steps, int batch, std::uint64_t seed) {
    const int res = data.resolution;
    auto draw = [&](std::uint64_t index) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(index),
                          static_cast<std::uint32_t>(index >> 32)};
        std::mt19937_64 rng(seq);
        return generate_sample(rng, data.palette, res, data.shrink_radius);
    };
    auto make_batch = [&](std::uint64_t first, int n) {
        auto img = torch::empty({n, res, res, 3});
        auto lab = torch::empty({n, res, res}, torch::kLong);
        for (int i = 0; i < n; ++i) {
            const auto s = draw(first + i);
            std::memcpy(img[i].data_ptr<float>(), s.image.data(), s.image.size() * sizeof(float));
            auto* l = lab[i].data_ptr<int64_t>();
            for (std::size_t k = 0; k < s.regions.size(); ++k) l[k] = s.regions[k];
        }
        return std::make_pair(img.permute({0, 3, 1, 2}).contiguous(), lab);
    };
    torch::optim::Adam opt(parser->parameters(), torch::optim::AdamOptions(3e-3));
    ParserReport report;
    double running = 0.0;
    for (int step = 0; step < steps; ++step) {
        const auto [img, lab] = make_batch(std::uint64_t(step) * batch, batch);
        const auto logits = parser->forward(img);
        const auto loss = F::cross_entropy(logits, lab);
        opt.zero_grad();
        loss.backward();
        opt.step();
        if (step >= steps - 20) running += (logits.argmax(1) == lab).to(torch::kFloat64).mean().item<double>();
    }
    report.train_accuracy = running / std::min(20, steps);
    const auto [img, lab] = make_batch(1ull << 40, 64);
    report.holdout_accuracy = (parser->predict(img) == lab).to(torch::kFloat64).mean().item<double>();
    return report;
}

void save_parser(const std::filesystem::path& path, ToyParser& parser) {
    Checkpoint c;
    append_module(c.tensors, "parser.", *parser);
    save_checkpoint(path, c);
}

void load_parser(const std::filesystem::path& path, ToyParser& parser) {
    restore_module(load_checkpoint(path), "parser.", *parser);
}

EditKind edit_kind_from_name(const std::string& name) {
    if (name == "hair") return EditKind::Hair;
    if (name == "glasses") return EditKind::Glasses;
    throw Error(ErrorCode::ConfigError, "unknown edit " + name);
}

double edit_stability(Generator& g, DatasetIterator& data, PerceptualExtractor& percep, ToyParser* parser,
                      const StabilityOptions& opt, bool edit_none) {
    if (opt.masks == MaskSource::Parser && !parser) throw Error(ErrorCode::ConfigError, "parser masks need a parser");
    torch::NoGradGuard ng;
    std::mt19937_64 rng(opt.seed);
    const bool mono = g->cfg.monolithic;
    std::array<int64_t, 4> counts{};
    for (auto c : kComponents) counts[index_of(c)] = g->cfg.primitives(c);
    const Component edited = opt.edit == EditKind::Hair ? Component::Hair : Component::Glasses;
    double total = 0.0;
    for (int done = 0; done < opt.pairs; done += kChunk) {
        const int b = std::min(kChunk, opt.pairs - done);
        std::vector<ColorConditioning> before;
        for (int i = 0; i < b; ++i) {
            before.push_back(data.sample_labels(rng));
            if (opt.edit == EditKind::Glasses) before.back().glasses_flag = 0.0f;
        }
        const auto bundle = LatentBundle::sample(b, g->cfg.z_dim, rng);
        auto after_bundle = bundle.clone();
        auto after = before;
        if (!edit_none) {
            if (opt.edit == EditKind::Hair) {
                if (!mono) after_bundle.z[index_of(Component::Hair)] = randn_from(rng, b, g->cfg.z_dim);
                for (auto& l : after) l.hair = data.sample_region_label(Region::Hair, rng);
            } else {
                for (auto& l : after) l.glasses_flag = 1.0f;
            }
        }
        std::vector<Camera> cams;
        for (int i = 0; i < b; ++i) cams.push_back(data.sample_camera(rng));
        const auto pre = g->synthesize(bundle, ConditioningBatch::from(before), opt.psi).scene;
        const auto post = g->synthesize(after_bundle, ConditioningBatch::from(after), opt.psi).scene;
        const auto img_pre = render_no_grad(pre, cams), img_post = render_no_grad(post, cams);

        torch::Tensor region;
        if (opt.masks == MaskSource::Parser) {
            const int cls = region_class(opt.edit);
            region = ((*parser)->predict(img_pre) == cls) | ((*parser)->predict(img_post) == cls);
            region = region.unsqueeze(1).to(torch::kFloat32);
        } else {
            region = torch::maximum(attribution(pre, counts, edited, cams), attribution(post, counts, edited, cams));
            region = (region > 0.5f).to(torch::kFloat32);
        }
        if (opt.dilate > 0) {
            region = F::max_pool2d(region, F::MaxPool2dFuncOptions(2 * opt.dilate + 1).stride(1).padding(opt.dilate));
        }
        total += percep->distance(img_pre, img_post, 1.0 - region).sum().item<double>();
    }
    return total / opt.pairs;
}

double glasses_recall(Generator& g, DatasetIterator& data, int n, double psi, std::uint64_t seed,
                      const std::function<bool(std::span<const float>, int, int)>& detector) {
    torch::NoGradGuard ng;
    std::mt19937_64 rng(seed);
    const int res = data.config().resolution;
    int hits = 0;
    for (int done = 0; done < n; done += kChunk) {
        const int b = std::min(kChunk, n - done);
        std::vector<ColorConditioning> labels;
        for (int i = 0; i < b; ++i) {
            labels.push_back(data.sample_labels(rng));
            labels.back().glasses_flag = 1.0f;  // drawn as flag 0, switched on
        }
        const auto bundle = LatentBundle::sample(b, g->cfg.z_dim, rng);
        const auto scene = g->synthesize(bundle, ConditioningBatch::from(labels), psi).scene;
        const auto img = render_no_grad(scene, std::vector<Camera>(b, toy_camera(0.0, 0.0, res)))
                             .permute({0, 2, 3, 1})
                             .contiguous();
        for (int i = 0; i < b; ++i) {
            const auto one = img[i];
            hits += detector(std::span<const float>(one.data_ptr<float>(), one.numel()), res, res);
        }
    }
    return static_cast<double>(hits) / n;
}

double light_distance(Generator& g, DatasetIterator& data, PerceptualExtractor& percep, int n, std::uint64_t seed) {
    require_components(g, "light distance");
    torch::NoGradGuard ng;
    std::mt19937_64 rng(seed);
    double total = 0.0;
    for (int done = 0; done < n; done += kChunk) {
        const int b = std::min(kChunk, n - done);
        std::vector<ColorConditioning> labels;
        std::vector<Camera> cams;
        for (int i = 0; i < b; ++i) {
            labels.push_back(data.sample_labels(rng));
            cams.push_back(data.sample_camera(rng));
        }
        const auto cond = ConditioningBatch::from(labels);
        const auto bundle = LatentBundle::sample(b, g->cfg.z_dim, rng);
        auto other = bundle.clone();
        other.z_light = randn_from(rng, b, g->cfg.z_dim);
        const auto a = render_no_grad(g->synthesize(bundle, cond).scene, cams);
        const auto c = render_no_grad(g->synthesize(other, cond).scene, cams);
        total += percep->distance(a, c).sum().item<double>();
    }
    return total / n;
}

PcaResult pca_directions(Generator& g, Component c, int64_t samples, int k, std::uint64_t seed) {
    require_components(g, "PCA");
    if (samples < 2) throw Error(ErrorCode::ConfigError, "PCA needs at least two samples");
    torch::NoGradGuard ng;
    std::mt19937_64 rng(seed);
    const int d = g->cfg.w_dim;
    auto sum = torch::zeros({d}, torch::kFloat64);
    auto outer = torch::zeros({d, d}, torch::kFloat64);
    const int64_t chunk = 2048;
    for (int64_t done = 0; done < samples; done += chunk) {
        const auto n = std::min(chunk, samples - done);
        const auto z = randn_from(rng, n, g->cfg.z_dim);
        const auto light = g->map_light(randn_from(rng, n, g->cfg.z_dim));
        const auto w = g->map_latent(c, z, light).to(torch::kFloat64);
        sum += w.sum(0);
        outer += w.t().mm(w);
    }
    const auto mean = sum / double(samples);
    const auto cov = (outer - double(samples) * mean.unsqueeze(1).mm(mean.unsqueeze(0))) / double(samples - 1);
    Eigen::VectorXd em(d);
    std::memcpy(em.data(), mean.data_ptr<double>(), sizeof(double) * d);
    const auto cc = cov.contiguous();
    Eigen::MatrixXd ec = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        cc.data_ptr<double>(), d, d);
    ec = 0.5 * (ec + ec.transpose());
    return pca_from_moments(em, ec, k);
}

namespace {

constexpr char kPcaMagic[4] = {'C', 'S', 'Y', 'P'};

template <typename T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_floats(std::string& out, const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) put<float>(out, static_cast<float>(data[i]));
}

}  // namespace

std::string encode_pca_sidecar(const PcaSidecar& s) {
    const auto k = static_cast<std::uint32_t>(s.components[0].directions.rows());
    const auto dim = static_cast<std::uint32_t>(s.components[0].directions.cols());
    std::string out(kPcaMagic, 4);
    put<std::uint32_t>(out, 1);
    put<std::uint64_t>(out, s.checkpoint_digest);
    put<std::uint32_t>(out, k);
    put<std::uint32_t>(out, dim);
    for (const auto& p : s.components) {
        if (p.directions.rows() != k || p.directions.cols() != dim) {
            throw Error(ErrorCode::ShapeMismatch, "sidecar components differ in shape");
        }
        put_floats(out, p.mean.data(), dim);
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = p.directions;
        put_floats(out, rows.data(), std::size_t(k) * dim);
        const Eigen::VectorXd sd = p.variances.cwiseSqrt();
        put_floats(out, sd.data(), k);
    }
    return out;
}

PcaSidecar decode_pca_sidecar(const std::string& bytes) {
    auto fail = [] { throw Error(ErrorCode::CheckpointInvalid, "malformed PCA sidecar"); };
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kPcaMagic, 4) != 0) fail();
    std::size_t pos = 4;
    auto get = [&](auto& v) {
        if (bytes.size() - pos < sizeof(v)) fail();
        std::memcpy(&v, bytes.data() + pos, sizeof(v));
        pos += sizeof(v);
    };
    std::uint32_t version = 0, k = 0, dim = 0;
    PcaSidecar s;
    get(version);
    get(s.checkpoint_digest);
    get(k);
    get(dim);
    if (version != 1 || k == 0 || dim == 0 || k > dim) fail();
    for (auto& p : s.components) {
        p.mean.resize(dim);
        p.directions.resize(k, dim);
        p.variances.resize(k);
        float f;
        for (std::uint32_t i = 0; i < dim; ++i) get(f), p.mean[i] = f;
        for (std::uint32_t r = 0; r < k; ++r) {
            for (std::uint32_t i = 0; i < dim; ++i) get(f), p.directions(r, i) = f;
        }
        for (std::uint32_t r = 0; r < k; ++r) get(f), p.variances[r] = double(f) * f;
    }
    if (pos != bytes.size()) fail();
    return s;
}

}  // namespace cosy
