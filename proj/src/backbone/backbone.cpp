#include "tripse/backbone.hpp"

#include <cstring>
#include <string>

#include "tripse/errors.hpp"
#include "tripse/ops.hpp"
#include "tripse/serialize.hpp"

namespace tripse {

namespace {

constexpr std::uint64_t kAttentionSeedSalt = 0x9E3779B97F4A7C15ULL;

template <typename T>
ConvParams<T> make_conv(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride, std::size_t pad,
                        Initializer& init) {
  ConvParams<T> p;
  p.weight = init.he_normal<T>({out_c, in_c, k, k}, in_c * k * k);
  p.stride = stride;
  p.padding = pad;
  return p;
}

template <typename T>
void push_conv(const std::string& prefix, const ConvParams<T>& p, StateList<T>& out) {
  out.push_back({prefix + ".weight", p.weight, true});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias, true});
}

template <typename T>
void push_bn(const std::string& prefix, const BatchNormState<T>& s, StateList<T>& out) {
  out.push_back({prefix + ".gamma", s.gamma, true});
  out.push_back({prefix + ".beta", s.beta, true});
  out.push_back({prefix + ".running_mean", s.running_mean, false});
  out.push_back({prefix + ".running_var", s.running_var, false});
}

void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
}

}  // namespace

std::array<Dims3, 4> BackboneConfig::stage_dims() const {
  if (in_channels == 0 || num_classes == 0) throw ConfigError("in_channels and num_classes must be positive");
  if (stem_stride == 0) throw ConfigError("stem_stride must be positive");
  std::size_t total_stride = stem_stride;
  for (const auto& s : stages) {
    if (s.width == 0 || s.depth == 0) throw ConfigError("stage width and depth must be positive");
    if (s.downsample) total_stride *= 2;
  }
  if (input_height == 0 || input_width == 0 || input_height % total_stride != 0 ||
      input_width % total_stride != 0) {
    throw ConfigError("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                      " is not divisible by the cumulative stride " + std::to_string(total_stride));
  }
  std::array<Dims3, 4> dims;
  std::size_t h = input_height / stem_stride;
  std::size_t w = input_width / stem_stride;
  for (std::size_t i = 0; i < 4; ++i) {
    if (stages[i].downsample) {
      h /= 2;
      w /= 2;
    }
    dims[i] = Dims3{stages[i].width, h, w};
  }
  return dims;
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in_c, std::size_t out_c, std::size_t stride, Initializer& init)
    : conv1(make_conv<T>(in_c, out_c, 3, stride, 1, init)),
      bn1(BatchNormState<T>::identity(out_c)),
      conv2(make_conv<T>(out_c, out_c, 3, 1, 1, init)),
      bn2(BatchNormState<T>::identity(out_c)) {
  if (stride != 1 || in_c != out_c) {
    proj = make_conv<T>(in_c, out_c, 1, stride, 0, init);
    proj_bn = BatchNormState<T>::identity(out_c);
  }
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::forward(const BasicTensor<T>& x, bool training) {
  auto h = relu(batchnorm2d(conv2d(x, conv1), bn1, training));
  h = batchnorm2d(conv2d(h, conv2), bn2, training);
  auto shortcut = proj ? batchnorm2d(conv2d(x, *proj), *proj_bn, training) : x;
  return relu(add(h, shortcut));
}

template <typename T>
void ResidualBlock<T>::collect_state(const std::string& prefix, StateList<T>& out) const {
  push_conv(prefix + ".conv1", conv1, out);
  push_bn(prefix + ".bn1", bn1, out);
  push_conv(prefix + ".conv2", conv2, out);
  push_bn(prefix + ".bn2", bn2, out);
  if (proj) {
    push_conv(prefix + ".proj", *proj, out);
    push_bn(prefix + ".proj_bn", *proj_bn, out);
  }
}

template <typename T>
MiniBackbone<T>::MiniBackbone(const BackboneConfig& cfg) : cfg_(cfg) {}

template <typename T>
MiniBackbone<T> MiniBackbone<T>::build(const BackboneConfig& cfg) {
  const auto dims = cfg.stage_dims();
  MiniBackbone m(cfg);
  Initializer host(cfg.seed);
  Initializer attn(cfg.seed ^ kAttentionSeedSalt);

  const std::size_t stem_width = cfg.stages[0].width;
  m.stem_ = make_conv<T>(cfg.in_channels, stem_width, 3, cfg.stem_stride, 1, host);
  m.stem_bn_ = BatchNormState<T>::identity(stem_width);
  std::size_t channels = stem_width;
  for (std::size_t s = 0; s < 4; ++s) {
    const StageSpec& spec = cfg.stages[s];
    for (std::size_t b = 0; b < spec.depth; ++b) {
      const std::size_t stride = (b == 0 && spec.downsample) ? 2 : 1;
      m.stages_[s].emplace_back(channels, spec.width, stride, host);
      channels = spec.width;
    }
    m.attn_[s] = make_attention<T>(cfg.attention, dims[s], attn);
  }
  m.head_.weight = host.he_normal<T>({cfg.num_classes, channels}, channels);
  m.head_.bias = host.zeros_param<T>({cfg.num_classes});
  return m;
}

template <typename T>
BasicTensor<T> MiniBackbone<T>::forward(const BasicTensor<T>& x, bool training, std::vector<Shape>* stage_shapes) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.input_height ||
      x.dim(3) != cfg_.input_width) {
    throw ShapeError("backbone expects (N," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(cfg_.input_height) + "," + std::to_string(cfg_.input_width) + "), got " +
                     x.shape().to_string());
  }
  if (stage_shapes) stage_shapes->clear();
  auto h = relu(batchnorm2d(conv2d(x, stem_), stem_bn_, training));
  for (std::size_t s = 0; s < 4; ++s) {
    for (auto& block : stages_[s]) h = block.forward(h, training);
    if (attn_[s]) h = attn_[s]->forward(h, training);
    if (stage_shapes) stage_shapes->push_back(h.shape());
  }
  return linear(global_avg_pool(h), head_);
}

template <typename T>
StateList<T> MiniBackbone<T>::state() const {
  StateList<T> out;
  push_conv("stem.conv", stem_, out);
  push_bn("stem.bn", stem_bn_, out);
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].collect_state("stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1), out);
    }
    if (attn_[s]) attn_[s]->collect_state("attn" + std::to_string(s + 1), out);
  }
  out.push_back({"head.weight", head_.weight, true});
  out.push_back({"head.bias", head_.bias, true});
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> MiniBackbone<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  for (auto& e : state()) {
    if (e.trainable) out.push_back(e.tensor);
  }
  return out;
}

template <typename T>
ParamCount MiniBackbone<T>::count_params() const {
  ParamCount c;
  c.total = count_trainable(state());
  for (const auto& a : attn_) {
    if (a) c.attention += a->param_count();
  }
  return c;
}

template <typename T>
std::uint64_t MiniBackbone<T>::fingerprint() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& e : state()) {
    fnv1a(h, e.name.data(), e.name.size());
    for (std::size_t d : e.tensor.shape().dims()) {
      const std::uint64_t v = d;
      fnv1a(h, &v, sizeof v);
    }
    const unsigned char sep = e.trainable ? 1 : 0;
    fnv1a(h, &sep, 1);
  }
  return h;
}

std::size_t host_param_count(const BackboneConfig& cfg) {
  (void)cfg.stage_dims();
  auto bn = [](std::size_t c) { return 2 * c; };
  std::size_t n = cfg.in_channels * cfg.stages[0].width * 9 + bn(cfg.stages[0].width);
  std::size_t channels = cfg.stages[0].width;
  for (const auto& spec : cfg.stages) {
    for (std::size_t b = 0; b < spec.depth; ++b) {
      const bool strided = b == 0 && spec.downsample;
      n += channels * spec.width * 9 + bn(spec.width) + spec.width * spec.width * 9 + bn(spec.width);
      if (strided || channels != spec.width) n += channels * spec.width + bn(spec.width);
      channels = spec.width;
    }
  }
  return n + channels * cfg.num_classes + cfg.num_classes;
}

void save_weights(const MiniBackbone<float>& model, std::ostream& out, std::uint32_t version) {
  const auto state = model.state();
  out.write("TSEW", 4);
  io::write_u32(out, version);
  io::write_u64(out, model.fingerprint());
  io::write_u32(out, static_cast<std::uint32_t>(state.size()));
  for (const auto& e : state) {
    io::write_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_tensor(out, e.tensor);
  }
}

std::uint32_t load_weights(MiniBackbone<float>& model, std::istream& in) {
  char magic[4];
  io::read_exact(in, magic, 4);
  if (std::memcmp(magic, "TSEW", 4) != 0) throw FormatError("not a TSEW checkpoint");
  const std::uint32_t version = io::read_u32(in);
  if (version != kWeightsVersion && version != kTrainingCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t fp = io::read_u64(in);
  if (fp != model.fingerprint()) {
    throw CheckpointError("checkpoint architecture fingerprint does not match the configured model");
  }
  auto state = model.state();
  const std::uint32_t count = io::read_u32(in);
  if (count != state.size()) throw CheckpointError("checkpoint tensor count does not match the model");

  // Stage everything first so a bad record leaves the model untouched.
  std::vector<Tensor> loaded;
  loaded.reserve(count);
  for (const auto& e : state) {
    const std::uint16_t len = io::read_u16(in);
    std::string name(len, '\0');
    io::read_exact(in, name.data(), len);
    if (name != e.name) throw CheckpointError("checkpoint record '" + name + "' where '" + e.name + "' expected");
    Tensor t = read_tensor(in);
    if (!(t.shape() == e.tensor.shape())) {
      throw CheckpointError("checkpoint tensor '" + name + "' has shape " + t.shape().to_string());
    }
    loaded.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto dst = state[i].tensor.mutable_data();
    const auto src = loaded[i].data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return version;
}

template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template class MiniBackbone<float>;
template class MiniBackbone<double>;

}  // namespace tripse
