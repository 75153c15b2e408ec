#include "mixcl/models.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "mixcl/common.hpp"

namespace mixcl {

ConvBlock::ConvBlock(int cout, int cin, int k)
    : w(Tensor::zeros({cout, cin, k}, true)),
      b(Tensor::zeros({cout}, true)),
      gamma(Tensor::full({cout}, 1.0, true)),
      beta(Tensor::zeros({cout}, true)),
      bn(cout) {}

FcnEncoderParams::FcnEncoderParams(int channels)
    : in_channels(channels),
      block1(128, channels, 8),
      block2(256, 128, 5),
      block3(128, 256, 3) {}

namespace {

void push_block(NamedTensors& out, const std::string& idx, const ConvBlock& blk,
                bool with_stats) {
  out.emplace_back("enc.conv" + idx + ".w", blk.w);
  out.emplace_back("enc.conv" + idx + ".b", blk.b);
  out.emplace_back("enc.bn" + idx + ".gamma", blk.gamma);
  out.emplace_back("enc.bn" + idx + ".beta", blk.beta);
  if (with_stats) {
    const int c = blk.gamma.dim(0);
    out.emplace_back("enc.bn" + idx + ".running_mean",
                     Tensor::from_values({c}, blk.bn.running_mean));
    out.emplace_back("enc.bn" + idx + ".running_var",
                     Tensor::from_values({c}, blk.bn.running_var));
    out.emplace_back(
        "enc.bn" + idx + ".num_updates",
        Tensor::scalar(static_cast<double>(blk.bn.num_updates)));
  }
}

const Tensor& find_tensor(const NamedTensors& file, const std::string& name) {
  for (const auto& [n, t] : file)
    if (n == name) return t;
  throw DataError("weight file missing tensor '" + name + "'");
}

void load_into(const NamedTensors& file, const std::string& name, Tensor& dst) {
  const Tensor& src = find_tensor(file, name);
  if (src.shape() != dst.shape())
    throw DataError("tensor '" + name + "' has shape " +
                    shape_str(src.shape()) + ", expected " +
                    shape_str(dst.shape()));
  dst.values() = src.values();
}

void load_vec(const NamedTensors& file, const std::string& name,
              std::vector<double>& dst) {
  const Tensor& src = find_tensor(file, name);
  if (src.numel() != static_cast<std::int64_t>(dst.size()))
    throw DataError("tensor '" + name + "' has " +
                    std::to_string(src.numel()) + " values, expected " +
                    std::to_string(dst.size()));
  dst = src.values();
}

void load_block(const NamedTensors& file, const std::string& idx,
                ConvBlock& blk) {
  load_into(file, "enc.conv" + idx + ".w", blk.w);
  load_into(file, "enc.conv" + idx + ".b", blk.b);
  load_into(file, "enc.bn" + idx + ".gamma", blk.gamma);
  load_into(file, "enc.bn" + idx + ".beta", blk.beta);
  load_vec(file, "enc.bn" + idx + ".running_mean", blk.bn.running_mean);
  load_vec(file, "enc.bn" + idx + ".running_var", blk.bn.running_var);
  blk.bn.num_updates = static_cast<std::int64_t>(
      std::llround(find_tensor(file, "enc.bn" + idx + ".num_updates").value()));
}

}  // namespace

NamedTensors FcnEncoderParams::trainable() {
  NamedTensors out;
  push_block(out, "1", block1, false);
  push_block(out, "2", block2, false);
  push_block(out, "3", block3, false);
  return out;
}

NamedTensors FcnEncoderParams::state() const {
  NamedTensors out;
  push_block(out, "1", block1, true);
  push_block(out, "2", block2, true);
  push_block(out, "3", block3, true);
  return out;
}

void FcnEncoderParams::load_state(const NamedTensors& file) {
  load_block(file, "1", block1);
  load_block(file, "2", block2);
  load_block(file, "3", block3);
}

ProjectionHeadParams::ProjectionHeadParams()
    : w1(Tensor::zeros({128, 128}, true)),
      b1(Tensor::zeros({128}, true)),
      w2(Tensor::zeros({128, 128}, true)),
      b2(Tensor::zeros({128}, true)) {}

NamedTensors ProjectionHeadParams::trainable() {
  return {{"head.fc1.w", w1},
          {"head.fc1.b", b1},
          {"head.fc2.w", w2},
          {"head.fc2.b", b2}};
}

NamedTensors ProjectionHeadParams::state() const {
  return {{"head.fc1.w", w1},
          {"head.fc1.b", b1},
          {"head.fc2.w", w2},
          {"head.fc2.b", b2}};
}

void ProjectionHeadParams::load_state(const NamedTensors& file) {
  load_into(file, "head.fc1.w", w1);
  load_into(file, "head.fc1.b", b1);
  load_into(file, "head.fc2.w", w2);
  load_into(file, "head.fc2.b", b2);
}

DecoderParams::DecoderParams(int channels_, int length_)
    : channels(channels_),
      length(length_),
      w1(Tensor::zeros({128, 256}, true)),
      b1(Tensor::zeros({256}, true)),
      w2(Tensor::zeros({256, channels_ * length_}, true)),
      b2(Tensor::zeros({channels_ * length_}, true)) {}

NamedTensors DecoderParams::trainable() {
  return {{"dec.fc1.w", w1},
          {"dec.fc1.b", b1},
          {"dec.fc2.w", w2},
          {"dec.fc2.b", b2}};
}

NamedTensors DecoderParams::state() const {
  return {{"dec.fc1.w", w1},
          {"dec.fc1.b", b1},
          {"dec.fc2.w", w2},
          {"dec.fc2.b", b2}};
}

void DecoderParams::load_state(const NamedTensors& file) {
  load_into(file, "dec.fc1.w", w1);
  load_into(file, "dec.fc1.b", b1);
  load_into(file, "dec.fc2.w", w2);
  load_into(file, "dec.fc2.b", b2);
}

ClassifierParams::ClassifierParams(int num_classes_)
    : num_classes(num_classes_),
      w(Tensor::zeros({128, num_classes_}, true)),
      b(Tensor::zeros({num_classes_}, true)) {}

NamedTensors ClassifierParams::trainable() {
  return {{"cls.fc.w", w}, {"cls.fc.b", b}};
}

NamedTensors ClassifierParams::state() const {
  return {{"cls.fc.w", w}, {"cls.fc.b", b}};
}

void ClassifierParams::load_state(const NamedTensors& file) {
  load_into(file, "cls.fc.w", w);
  load_into(file, "cls.fc.b", b);
}

// ---------------------------------------------------------------- forward --

Tensor fcn_encode(Tape& tape, FcnEncoderParams& params, const Tensor& x,
                  Mode mode) {
  if (x.ndim() != 3)
    throw std::invalid_argument("fcn_encode: input must be [N,C,T], got " +
                                shape_str(x.shape()));
  if (x.dim(1) != params.in_channels)
    throw std::invalid_argument(
        "fcn_encode: encoder built for " +
        std::to_string(params.in_channels) + " channels, input has " +
        std::to_string(x.dim(1)));
  if (x.dim(2) < 8)
    throw std::invalid_argument(
        "fcn_encode: input length " + std::to_string(x.dim(2)) +
        " is shorter than the largest kernel (8)");
  // K=8 is even; pad 3 left / 4 right keeps the output length equal to T.
  Tensor a = relu(tape, batchnorm1d(tape,
                                    conv1d(tape, x, params.block1.w,
                                           params.block1.b, 3),
                                    params.block1.gamma, params.block1.beta,
                                    params.block1.bn, mode));
  Tensor b = relu(tape, batchnorm1d(tape,
                                    conv1d(tape, a, params.block2.w,
                                           params.block2.b),
                                    params.block2.gamma, params.block2.beta,
                                    params.block2.bn, mode));
  Tensor c = relu(tape, batchnorm1d(tape,
                                    conv1d(tape, b, params.block3.w,
                                           params.block3.b),
                                    params.block3.gamma, params.block3.beta,
                                    params.block3.bn, mode));
  return global_avg_pool(tape, c);
}

Tensor project(Tape& tape, ProjectionHeadParams& params, const Tensor& h) {
  if (h.ndim() != 2 || h.dim(1) != 128)
    throw std::invalid_argument("project: expected [N,128], got " +
                                shape_str(h.shape()));
  return linear(tape, relu(tape, linear(tape, h, params.w1, params.b1)),
                params.w2, params.b2);
}

Tensor decode(Tape& tape, DecoderParams& params, const Tensor& h) {
  if (h.ndim() != 2 || h.dim(1) != 128)
    throw std::invalid_argument("decode: expected [N,128], got " +
                                shape_str(h.shape()));
  Tensor flat = linear(
      tape, relu(tape, linear(tape, h, params.w1, params.b1)), params.w2,
      params.b2);
  return reshape(tape, flat, {h.dim(0), params.channels, params.length});
}

Tensor classify(Tape& tape, ClassifierParams& params, const Tensor& h) {
  if (h.ndim() != 2 || h.dim(1) != 128)
    throw std::invalid_argument("classify: expected [N,128], got " +
                                shape_str(h.shape()));
  return linear(tape, h, params.w, params.b);
}

// ------------------------------------------------------------------- init --

namespace {

void init_weight(Rng& rng, Tensor& w, int fan_in) {
  const double sd = std::sqrt(2.0 / fan_in);
  w.values() = rng.normal_vec(0.0, sd, w.values().size());
}

void zero(Tensor& t) { std::fill(t.values().begin(), t.values().end(), 0.0); }

void init_conv_block(Rng& rng, ConvBlock& blk) {
  init_weight(rng, blk.w, blk.w.dim(1) * blk.w.dim(2));
  zero(blk.b);
  std::fill(blk.gamma.values().begin(), blk.gamma.values().end(), 1.0);
  zero(blk.beta);
  std::fill(blk.bn.running_mean.begin(), blk.bn.running_mean.end(), 0.0);
  std::fill(blk.bn.running_var.begin(), blk.bn.running_var.end(), 1.0);
  blk.bn.num_updates = 0;
}

}  // namespace

void he_normal_init(Rng& rng, FcnEncoderParams& params) {
  init_conv_block(rng, params.block1);
  init_conv_block(rng, params.block2);
  init_conv_block(rng, params.block3);
}

void he_normal_init(Rng& rng, ProjectionHeadParams& params) {
  init_weight(rng, params.w1, params.w1.dim(0));
  zero(params.b1);
  init_weight(rng, params.w2, params.w2.dim(0));
  zero(params.b2);
}

void he_normal_init(Rng& rng, DecoderParams& params) {
  init_weight(rng, params.w1, params.w1.dim(0));
  zero(params.b1);
  init_weight(rng, params.w2, params.w2.dim(0));
  zero(params.b2);
}

void he_normal_init(Rng& rng, ClassifierParams& params) {
  init_weight(rng, params.w, params.w.dim(0));
  zero(params.b);
}

// ---------------------------------------------------------- serialization --

namespace {

constexpr char kMagic[4] = {'M', 'C', 'L', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8)
    out.push_back(static_cast<char>((v >> s) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int s = 0; s < 64; s += 8)
    out.push_back(static_cast<char>((bits >> s) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw DataError(path + ": truncated weight file (reading " +
                      std::string(what) + ")");
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int s = 0; s < 16; s += 8)
      v |= static_cast<std::uint16_t>(
          static_cast<std::uint8_t>(buf[pos++]) << s);
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int s = 0; s < 32; s += 8)
      v |= static_cast<std::uint32_t>(
               static_cast<std::uint8_t>(buf[pos++]))
           << s;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int s = 0; s < 64; s += 8)
      v |= static_cast<std::uint64_t>(
               static_cast<std::uint8_t>(buf[pos++]))
           << s;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
};

}  // namespace

void save_weights(const NamedTensors& tensors, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff)
      throw std::invalid_argument("save_weights: tensor name too long");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i)
      put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (double v : t.values()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing " + path);
}

NamedTensors load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw DataError(path + ": bad magic, not a mixcl weight file");
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw DataError(path + ": unsupported weight format version " +
                    std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t name_len = r.u16("name length");
    r.need(name_len, "tensor name");
    std::string name = buf.substr(r.pos, name_len);
    r.pos += name_len;
    const int ndim = r.u8("ndim");
    Shape shape(static_cast<std::size_t>(ndim));
    std::int64_t n = 1;
    for (int i = 0; i < ndim; ++i) {
      shape[static_cast<std::size_t>(i)] =
          static_cast<int>(r.u32("dimension"));
      n *= shape[static_cast<std::size_t>(i)];
    }
    std::vector<double> values(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
      values[static_cast<std::size_t>(i)] = r.f64("values");
    out.emplace_back(std::move(name),
                     Tensor::from_values(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace mixcl
