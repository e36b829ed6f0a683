#include "encoder.hpp"

#include "common.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace sonarssl {

using nlohmann::json;
namespace nn = torch::nn;

std::string_view to_string(Arch arch) {
    switch (arch) {
    case Arch::vit_tiny: return "vit_tiny";
    case Arch::vit_small: return "vit_small";
    case Arch::toy_conv: return "toy_conv";
    }
    return "?";
}

std::string_view to_string(Pooling pooling) {
    return pooling == Pooling::mean_tokens ? "mean_tokens" : "class_token";
}

std::string_view to_string(InitMode mode) {
    return mode == InitMode::random ? "random" : "external_checkpoint";
}

Arch parse_arch(std::string_view text) {
    for (Arch a : {Arch::vit_tiny, Arch::vit_small, Arch::toy_conv}) {
        if (to_string(a) == text) return a;
    }
    throw Error(ErrorCode::invalid_argument, "unknown arch '" + std::string(text) + "'");
}

Pooling parse_pooling(std::string_view text) {
    if (text == "mean_tokens") return Pooling::mean_tokens;
    if (text == "class_token") return Pooling::class_token;
    throw Error(ErrorCode::invalid_argument, "unknown pooling '" + std::string(text) + "'");
}

InitMode parse_init_mode(std::string_view text) {
    if (text == "random") return InitMode::random;
    if (text == "external_checkpoint") return InitMode::external_checkpoint;
    throw Error(ErrorCode::invalid_argument, "unknown init mode '" + std::string(text) + "'");
}

EncoderSpec EncoderSpec::preset(Arch arch) {
    EncoderSpec s;
    s.arch = arch;
    switch (arch) {
    case Arch::vit_tiny:
        s.embed_dim = 192, s.depth = 12, s.heads = 3;
        break;
    case Arch::vit_small:
        s.embed_dim = 384, s.depth = 12, s.heads = 6;
        break;
    case Arch::toy_conv:
        s.embed_dim = 128, s.depth = 4, s.heads = 0;
        break;
    }
    s.projector_widths = {s.embed_dim, kProjectorDim};
    return s;
}

void EncoderSpec::set_proj_dim(int d) {
    require_arg(d >= 1, "projector output dimension must be >= 1");
    projector_widths.back() = d;
}

int EncoderSpec::num_tokens() const {
    if (arch == Arch::toy_conv) return 0;
    const int side = input_size / patch_size;
    return side * side + (pooling == Pooling::class_token ? 1 : 0);
}

void EncoderSpec::validate() const {
    require_arg(input_size >= 1 && patch_size >= 1, "input and patch sizes must be positive");
    require_arg(embed_dim >= 1, "embed_dim must be positive");
    require_arg(!projector_widths.empty(), "projector needs at least an output width");
    for (int w : projector_widths) require_arg(w >= 1, "projector widths must be positive");
    if (arch == Arch::toy_conv) {
        require_arg(input_size % 16 == 0, "toy_conv input size must be a multiple of 16");
    } else {
        require_arg(input_size % patch_size == 0, "input size must be divisible by patch_size");
        require_arg(depth >= 1 && heads >= 1, "ViT needs depth >= 1 and heads >= 1");
        require_arg(embed_dim % heads == 0, "embed_dim must be divisible by heads");
    }
    if (init_mode == InitMode::external_checkpoint) {
        require_arg(!checkpoint_path.empty(), "external_checkpoint init needs a checkpoint path");
    }
}

json EncoderSpec::to_json() const {
    json j{{"arch", std::string(to_string(arch))},
           {"input_size", input_size},
           {"patch_size", patch_size},
           {"embed_dim", embed_dim},
           {"depth", depth},
           {"heads", heads},
           {"pooling", std::string(to_string(pooling))},
           {"init_mode", std::string(to_string(init_mode))},
           {"projector_widths", projector_widths}};
    if (init_mode == InitMode::external_checkpoint) j["checkpoint_path"] = checkpoint_path;
    return j;
}

EncoderSpec EncoderSpec::from_json(const json& j) {
    EncoderSpec s = preset(parse_arch(j.value("arch", std::string("vit_tiny"))));
    s.input_size = j.value("input_size", s.input_size);
    s.patch_size = j.value("patch_size", s.patch_size);
    s.embed_dim = j.value("embed_dim", s.embed_dim);
    s.depth = j.value("depth", s.depth);
    s.heads = j.value("heads", s.heads);
    s.pooling = parse_pooling(j.value("pooling", std::string(to_string(s.pooling))));
    s.init_mode = parse_init_mode(j.value("init_mode", std::string(to_string(s.init_mode))));
    s.checkpoint_path = j.value("checkpoint_path", std::string());
    if (j.contains("projector_widths")) {
        s.projector_widths = j.at("projector_widths").get<std::vector<int>>();
    } else {
        s.projector_widths = {s.embed_dim, kProjectorDim};
    }
    s.validate();
    return s;
}

std::string EncoderSpec::hash() const {
    json j = to_json();
    j.erase("checkpoint_path");
    j.erase("init_mode");
    return hex64(fnv1a64(j.dump()));
}

namespace {

struct Backbone : nn::Module {
    virtual torch::Tensor forward(const torch::Tensor& x) = 0;
};

struct PatchEmbed : nn::Module {
    nn::Conv2d proj{nullptr};
    PatchEmbed(int dim, int patch) {
        proj = register_module("proj", nn::Conv2d(nn::Conv2dOptions(3, dim, patch).stride(patch)));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        return proj->forward(x).flatten(2).transpose(1, 2); // N x T x D
    }
};

struct Attention : nn::Module {
    nn::Linear qkv{nullptr}, proj{nullptr};
    int heads;
    Attention(int dim, int n_heads) : heads(n_heads) {
        qkv = register_module("qkv", nn::Linear(dim, 3 * dim));
        proj = register_module("proj", nn::Linear(dim, dim));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        const auto n = x.size(0), t = x.size(1), d = x.size(2);
        auto parts = qkv->forward(x).reshape({n, t, 3, heads, d / heads}).permute({2, 0, 3, 1, 4});
        auto q = parts[0], k = parts[1], v = parts[2];
        auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(double(d / heads)), -1);
        auto out = torch::matmul(attn, v).transpose(1, 2).reshape({n, t, d});
        return proj->forward(out);
    }
};

struct Mlp : nn::Module {
    nn::Linear fc1{nullptr}, fc2{nullptr};
    Mlp(int dim, int hidden) {
        fc1 = register_module("fc1", nn::Linear(dim, hidden));
        fc2 = register_module("fc2", nn::Linear(hidden, dim));
    }
    torch::Tensor forward(const torch::Tensor& x) { return fc2->forward(torch::gelu(fc1->forward(x))); }
};

struct Block : nn::Module {
    nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    std::shared_ptr<Attention> attn;
    std::shared_ptr<Mlp> mlp;
    Block(int dim, int heads) {
        norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));
        attn = register_module("attn", std::make_shared<Attention>(dim, heads));
        norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));
        mlp = register_module("mlp", std::make_shared<Mlp>(dim, 4 * dim));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto y = x + attn->forward(norm1->forward(x));
        return y + mlp->forward(norm2->forward(y));
    }
};

// Pre-norm ViT with timm-compatible parameter names.
struct VisionTransformer : Backbone {
    std::shared_ptr<PatchEmbed> patch_embed;
    torch::Tensor cls_token, pos_embed;
    std::vector<std::shared_ptr<Block>> blocks;
    nn::LayerNorm norm{nullptr};
    Pooling pooling;

    explicit VisionTransformer(const EncoderSpec& s) : pooling(s.pooling) {
        const int dim = s.embed_dim;
        patch_embed = register_module("patch_embed", std::make_shared<PatchEmbed>(dim, s.patch_size));
        if (pooling == Pooling::class_token) {
            cls_token = register_parameter("cls_token", torch::zeros({1, 1, dim}));
        }
        pos_embed = register_parameter("pos_embed", torch::zeros({1, s.num_tokens(), dim}));
        auto list = register_module("blocks", nn::ModuleList());
        for (int b = 0; b < s.depth; ++b) {
            blocks.push_back(std::make_shared<Block>(dim, s.heads));
            list->push_back(blocks.back());
        }
        norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));

        torch::NoGradGuard guard;
        nn::init::normal_(pos_embed, 0.0, 0.02);
        if (cls_token.defined()) nn::init::normal_(cls_token, 0.0, 1e-6);
        for (auto& m : modules(false)) {
            if (auto* lin = m->as<nn::Linear>()) {
                nn::init::normal_(lin->weight, 0.0, 0.02).clamp_(-0.04, 0.04);
                nn::init::zeros_(lin->bias);
            }
        }
    }

    torch::Tensor forward(const torch::Tensor& x) override {
        auto t = patch_embed->forward(x);
        if (pooling == Pooling::class_token) {
            t = torch::cat({cls_token.expand({t.size(0), 1, t.size(2)}), t}, 1);
        }
        t = t + pos_embed;
        for (auto& b : blocks) t = b->forward(t);
        t = norm->forward(t);
        return pooling == Pooling::class_token ? t.select(1, 0) : t.mean(1);
    }
};

// Patchify stem then three stride/width stages, global average pool.
struct ToyConv : Backbone {
    nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr};
    nn::GroupNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr}, norm4{nullptr};

    explicit ToyConv(const EncoderSpec& s) {
        const int d = s.embed_dim;
        const int w1 = std::max(8, d / 4), w2 = std::max(8, d / 2);
        conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(3, w1, 4).stride(4)));
        norm1 = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(4, w1)));
        conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(w1, w2, 3).stride(2).padding(1)));
        norm2 = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(4, w2)));
        conv3 = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(w2, d, 3).stride(2).padding(1)));
        norm3 = register_module("norm3", nn::GroupNorm(nn::GroupNormOptions(4, d)));
        conv4 = register_module("conv4", nn::Conv2d(nn::Conv2dOptions(d, d, 3).padding(1)));
        norm4 = register_module("norm4", nn::GroupNorm(nn::GroupNormOptions(4, d)));
    }

    torch::Tensor forward(const torch::Tensor& x) override {
        auto y = torch::gelu(norm1->forward(conv1->forward(x)));
        y = torch::gelu(norm2->forward(conv2->forward(y)));
        y = torch::gelu(norm3->forward(conv3->forward(y)));
        y = y + torch::gelu(norm4->forward(conv4->forward(y)));
        return y.mean({2, 3});
    }
};

struct Projector : nn::Module {
    std::vector<nn::Linear> layers;
    Projector(int in, const std::vector<int>& widths) {
        auto list = register_module("layers", nn::ModuleList());
        for (int w : widths) {
            layers.push_back(nn::Linear(in, w));
            list->push_back(layers.back());
            in = w;
        }
    }
    torch::Tensor forward(torch::Tensor x) {
        for (std::size_t k = 0; k < layers.size(); ++k) {
            x = layers[k]->forward(x);
            if (k + 1 < layers.size()) x = torch::gelu(x);
        }
        return x;
    }
};

std::int64_t count(const std::vector<torch::Tensor>& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
}

std::string strip_prefix(const std::string& name, std::string_view prefix) {
    return name.starts_with(prefix) ? name.substr(prefix.size()) : name;
}

} // namespace

class EncoderImpl {
public:
    EncoderSpec spec;
    std::shared_ptr<Backbone> backbone;
    std::shared_ptr<Projector> projector;
    LoadReport report;

    EncoderImpl(const EncoderSpec& s, std::uint64_t seed) : spec(s) {
        spec.validate();
        torch::manual_seed(derive_seed({seed, 0xbacbULL}));
        if (spec.arch == Arch::toy_conv) {
            backbone = std::make_shared<ToyConv>(spec);
        } else {
            backbone = std::make_shared<VisionTransformer>(spec);
        }
        torch::manual_seed(derive_seed({seed, 0x9e0ULL}));
        projector = std::make_shared<Projector>(spec.embed_dim, spec.projector_widths);
    }
};

Encoder::Encoder() = default;
Encoder::~Encoder() = default;
Encoder::Encoder(Encoder&&) noexcept = default;
Encoder& Encoder::operator=(Encoder&&) noexcept = default;

Encoder::Encoder(const EncoderSpec& spec, std::uint64_t seed) : impl_(std::make_unique<EncoderImpl>(spec, seed)) {
    if (spec.init_mode == InitMode::external_checkpoint) {
        const Checkpoint ckpt = read_checkpoint(spec.checkpoint_path);
        impl_->report = load_backbone(ckpt.tensors);
        require(!impl_->report.loaded.empty(), ErrorCode::format,
                "checkpoint " + spec.checkpoint_path + " provides no tensor of this backbone");
    }
}

const EncoderSpec& Encoder::spec() const { return impl_->spec; }
int Encoder::feature_dim() const { return impl_->spec.embed_dim; }
int Encoder::proj_dim() const { return impl_->spec.proj_dim(); }
const LoadReport& Encoder::init_report() const { return impl_->report; }

Embeddings Encoder::forward(const torch::Tensor& x) {
    const int s = impl_->spec.input_size;
    require(x.dim() == 4 && x.size(1) == 3 && x.size(2) == s && x.size(3) == s, ErrorCode::shape_mismatch,
            "encoder expects N x 3 x " + std::to_string(s) + " x " + std::to_string(s) + " input, got " +
                [&] {
                    std::string out;
                    for (auto v : x.sizes()) out += (out.empty() ? "" : "x") + std::to_string(v);
                    return out;
                }());
    Embeddings e;
    e.h = impl_->backbone->forward(x);
    e.z = impl_->projector->forward(e.h);
    return e;
}

torch::Tensor Encoder::features(const torch::Tensor& x) { return forward(x).h; }

Embeddings Encoder::encode(std::span<const Image> images, std::size_t chunk) {
    require_arg(chunk >= 1, "chunk must be >= 1");
    const bool was_training = impl_->backbone->is_training();
    train(false);
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> hs, zs;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const auto n = std::min(chunk, images.size() - start);
        auto e = forward(to_tensor(images.subspan(start, n)));
        hs.push_back(e.h);
        zs.push_back(e.z);
    }
    train(was_training);
    if (hs.empty()) {
        return {torch::zeros({0, feature_dim()}), torch::zeros({0, proj_dim()})};
    }
    return {torch::cat(hs), torch::cat(zs)};
}

void Encoder::train(bool on) {
    impl_->backbone->train(on);
    impl_->projector->train(on);
}

std::vector<torch::Tensor> Encoder::backbone_parameters() const { return impl_->backbone->parameters(); }
std::vector<torch::Tensor> Encoder::projector_parameters() const { return impl_->projector->parameters(); }

std::vector<torch::Tensor> Encoder::parameters() const {
    auto all = backbone_parameters();
    for (auto& p : projector_parameters()) all.push_back(p);
    return all;
}

std::int64_t Encoder::backbone_param_count() const { return count(backbone_parameters()); }
std::int64_t Encoder::projector_param_count() const { return count(projector_parameters()); }

std::vector<std::pair<std::string, torch::Tensor>> Encoder::named_parameters() const {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : impl_->backbone->named_parameters()) out.emplace_back("backbone." + item.key(), item.value());
    for (const auto& item : impl_->projector->named_parameters()) {
        out.emplace_back("projector." + item.key(), item.value());
    }
    return out;
}

Encoder Encoder::clone() const {
    EncoderSpec s = impl_->spec;
    s.init_mode = InitMode::random;
    Encoder copy(s, 0);
    copy.impl_->spec = impl_->spec;
    copy.impl_->report = impl_->report;
    copy.copy_parameters_from(*this);
    copy.train(impl_->backbone->is_training());
    return copy;
}

void Encoder::copy_parameters_from(const Encoder& other) {
    auto dst = named_parameters();
    auto src = other.named_parameters();
    require(dst.size() == src.size(), ErrorCode::shape_mismatch, "encoders have different parameter sets");
    torch::NoGradGuard guard;
    for (std::size_t k = 0; k < dst.size(); ++k) {
        require(dst[k].first == src[k].first && dst[k].second.sizes() == src[k].second.sizes(),
                ErrorCode::shape_mismatch, "parameter mismatch at " + dst[k].first);
        dst[k].second.copy_(src[k].second);
    }
}

LoadReport Encoder::load_backbone(const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
    std::map<std::string, torch::Tensor> model;
    for (const auto& item : impl_->backbone->named_parameters()) model.emplace(item.key(), item.value());

    LoadReport report;
    std::vector<std::string> mismatched;
    std::map<std::string, torch::Tensor> matched;
    for (const auto& [raw, tensor] : tensors) {
        if (raw.starts_with("projector.")) {
            report.skipped.push_back(raw);
            continue;
        }
        const std::string name = strip_prefix(raw, "backbone.");
        auto it = model.find(name);
        if (it == model.end()) {
            report.skipped.push_back(raw);
            continue;
        }
        if (it->second.sizes() != tensor.sizes()) {
            std::ostringstream msg;
            msg << name << " (model " << it->second.sizes() << ", checkpoint " << tensor.sizes() << ")";
            mismatched.push_back(msg.str());
            continue;
        }
        matched.emplace(name, tensor);
    }
    if (!mismatched.empty()) {
        std::string msg = "checkpoint shape mismatch in " + std::to_string(mismatched.size()) + " tensor(s):";
        for (const auto& m : mismatched) msg += "\n  " + m;
        throw Error(ErrorCode::shape_mismatch, msg);
    }
    torch::NoGradGuard guard;
    for (auto& [name, param] : model) {
        auto it = matched.find(name);
        if (it == matched.end()) {
            report.missing.push_back(name);
            continue;
        }
        param.copy_(it->second.to(torch::kFloat32));
        report.loaded.push_back(name);
    }
    return report;
}

torch::Tensor to_tensor(std::span<const Image* const> images) {
    require_arg(!images.empty(), "cannot stack an empty image list");
    const Image& first = *images[0];
    require(first.channels == 3, ErrorCode::shape_mismatch, "encoder input must have 3 channels");
    auto out = torch::empty({static_cast<std::int64_t>(images.size()), 3, first.height, first.width});
    float* dst = out.data_ptr<float>();
    for (const Image* img : images) {
        require(img->channels == 3 && img->height == first.height && img->width == first.width,
                ErrorCode::shape_mismatch, "images in a batch must share one 3-channel shape");
        std::memcpy(dst, img->data.data(), img->data.size() * sizeof(float));
        dst += img->data.size();
    }
    return out;
}

torch::Tensor to_tensor(std::span<const Image> images) {
    std::vector<const Image*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& img : images) ptrs.push_back(&img);
    return to_tensor(std::span<const Image* const>(ptrs));
}

namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    require(static_cast<bool>(in), ErrorCode::format, "truncated checkpoint " + path);
    return value;
}

} // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        require(static_cast<bool>(out), ErrorCode::io, "cannot open " + tmp + " for writing");
        out.write("MJCK", 4);
        put<std::uint16_t>(out, kCheckpointVersion);
        const std::string meta = ckpt.metadata.dump();
        put<std::uint64_t>(out, meta.size());
        out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
        put<std::uint64_t>(out, ckpt.tensors.size());
        for (const auto& [name, tensor] : ckpt.tensors) {
            const auto t = tensor.detach().to(torch::kFloat32).contiguous();
            put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
            for (auto d : t.sizes()) put<std::int64_t>(out, d);
            out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
                      static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        require(static_cast<bool>(out), ErrorCode::io, "write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const std::string p = path.string();
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::not_found, "cannot open checkpoint " + p);
    char magic[4] = {};
    in.read(magic, 4);
    require(in && std::memcmp(magic, "MJCK", 4) == 0, ErrorCode::format, p + " is not a checkpoint (bad magic)");
    const auto version = get<std::uint16_t>(in, p);
    require(version == kCheckpointVersion, ErrorCode::format, "unsupported checkpoint version " + std::to_string(version));
    const auto meta_len = get<std::uint64_t>(in, p);
    require(meta_len < (1ULL << 30), ErrorCode::format, "implausible metadata length in " + p);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta_len));
    require(static_cast<bool>(in), ErrorCode::format, "truncated checkpoint " + p);

    Checkpoint ckpt;
    try {
        ckpt.metadata = json::parse(meta);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, "bad checkpoint metadata in " + p + ": " + e.what());
    }
    const auto n = get<std::uint64_t>(in, p);
    for (std::uint64_t k = 0; k < n; ++k) {
        const auto name_len = get<std::uint32_t>(in, p);
        require(name_len < 4096, ErrorCode::format, "implausible tensor name length in " + p);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = get<std::uint32_t>(in, p);
        require(rank <= 8, ErrorCode::format, "implausible tensor rank in " + p);
        std::vector<std::int64_t> dims(rank);
        for (auto& d : dims) {
            d = get<std::int64_t>(in, p);
            require(d >= 0, ErrorCode::format, "negative tensor dimension in " + p);
        }
        auto t = torch::empty(dims, torch::kFloat32);
        in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        require(static_cast<bool>(in), ErrorCode::format, "truncated tensor " + name + " in " + p);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

Checkpoint make_checkpoint(const Encoder& encoder, json metadata) {
    Checkpoint ckpt;
    ckpt.metadata = std::move(metadata);
    ckpt.metadata["arch"] = std::string(to_string(encoder.spec().arch));
    ckpt.metadata["encoder"] = encoder.spec().to_json();
    ckpt.metadata["spec_hash"] = encoder.spec().hash();
    for (auto& [name, t] : encoder.named_parameters()) ckpt.tensors.emplace_back(name, t.detach().clone());
    return ckpt;
}

Encoder load_encoder(const std::filesystem::path& path, LoadReport* report) {
    Checkpoint ckpt = read_checkpoint(path);
    require(ckpt.metadata.contains("encoder"), ErrorCode::format, path.string() + " has no encoder spec in its metadata");
    EncoderSpec spec = EncoderSpec::from_json(ckpt.metadata.at("encoder"));
    spec.init_mode = InitMode::random;
    Encoder enc(spec, 0);

    LoadReport rep = enc.load_backbone(ckpt.tensors);
    std::map<std::string, torch::Tensor> file;
    for (auto& [name, t] : ckpt.tensors) file.emplace(name, t);
    torch::NoGradGuard guard;
    std::vector<std::string> skipped;
    for (const auto& s : rep.skipped) {
        if (!s.starts_with("projector.")) skipped.push_back(s);
    }
    for (auto& [name, param] : enc.named_parameters()) {
        if (!name.starts_with("projector.")) continue;
        auto it = file.find(name);
        if (it == file.end()) {
            rep.missing.push_back(name);
            continue;
        }
        require(it->second.sizes() == param.sizes(), ErrorCode::shape_mismatch, "checkpoint shape mismatch at " + name);
        param.copy_(it->second);
        rep.loaded.push_back(name);
    }
    rep.skipped = skipped;
    require(rep.missing.empty(), ErrorCode::format,
            path.string() + " is missing " + std::to_string(rep.missing.size()) + " tensor(s), first: " +
                (rep.missing.empty() ? "" : rep.missing.front()));
    if (report) *report = rep;
    return enc;
}

} // namespace sonarssl
