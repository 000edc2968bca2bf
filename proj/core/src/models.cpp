#include "xfer/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xfer/rng.hpp"

namespace xfer {

// ---- ArchSpec ----------------------------------------------------------------

std::string ArchSpec::to_string() const {
  std::ostringstream os;
  os << "kind=" << kind << ";input=" << input_h << "x" << input_w << ";features=" << features
     << ";hidden=" << hidden << ";classes=" << classes << ";channels=";
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (i) os << ",";
    os << channels[i];
  }
  os << ";kernel=" << kernel << ";family=" << family_name(family)
     << ";activation=" << (activation == OutputActivation::linear ? "linear" : "softmax");
  return os.str();
}

ArchSpec ArchSpec::from_string(const std::string& s) {
  ArchSpec spec;
  spec.channels.clear();
  std::stringstream ss(s);
  std::string kv;
  while (std::getline(ss, kv, ';')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("ArchSpec: malformed field " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "kind") {
      spec.kind = val;
    } else if (key == "input") {
      const auto x = val.find('x');
      spec.input_h = std::stoi(val.substr(0, x));
      spec.input_w = std::stoi(val.substr(x + 1));
    } else if (key == "features") {
      spec.features = std::stoi(val);
    } else if (key == "hidden") {
      spec.hidden = std::stoi(val);
    } else if (key == "classes") {
      spec.classes = std::stoi(val);
    } else if (key == "channels") {
      std::stringstream cs(val);
      std::string c;
      while (std::getline(cs, c, ',')) spec.channels.push_back(std::stoi(c));
    } else if (key == "kernel") {
      spec.kernel = std::stoi(val);
    } else if (key == "family") {
      spec.family = family_from_name(val);
    } else if (key == "activation") {
      spec.activation = val == "softmax" ? OutputActivation::softmax : OutputActivation::linear;
    } else {
      throw std::invalid_argument("ArchSpec: unknown field " + key);
    }
  }
  return spec;
}

// ---- ParamSet ------------------------------------------------------------------

TensorPtr ParamSet::add(const std::string& name, TensorPtr t) {
  for (const auto& [n, _] : items_) {
    if (n == name) throw std::invalid_argument("ParamSet: duplicate parameter " + name);
  }
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

const TensorPtr& ParamSet::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw std::out_of_range("ParamSet: no parameter named " + name);
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& [n, _] : items_) {
    if (n == name) return true;
  }
  return false;
}

std::vector<TensorPtr> ParamSet::tensors() const {
  std::vector<TensorPtr> out;
  out.reserve(items_.size());
  for (const auto& [_, t] : items_) out.push_back(t);
  return out;
}

std::int64_t ParamSet::value_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : items_) n += t->size();
  return n;
}

// ---- builders ------------------------------------------------------------------

namespace {

TensorPtr glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  const int n = shape_size(shape);
  std::vector<double> values(static_cast<std::size_t>(n));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor::make(std::move(shape), std::move(values), true);
}

void add_conv_stage(ParamSet& params, const std::string& name, int cin, int cout, int k,
                    Rng& rng) {
  params.add(name + ".w", glorot({cout, cin, k, k}, cin * k * k, cout * k * k, rng));
  params.add(name + ".b", Tensor::zeros({cout}, true));
}

void add_lstm(ParamSet& params, int in, int hidden, Rng& rng) {
  params.add("lstm.wx", glorot({4 * hidden, in}, in, 4 * hidden, rng));
  params.add("lstm.wh", glorot({4 * hidden, hidden}, hidden, 4 * hidden, rng));
  params.add("lstm.b", Tensor::zeros({4 * hidden}, true));
}

void add_fc(ParamSet& params, const std::string& name, int in, int out, Rng& rng) {
  params.add(name + ".w", glorot({out, in}, in, out, rng));
  params.add(name + ".b", Tensor::zeros({out}, true));
}

// conv output spatial size after the pooled stages (same padding, pool /2)
std::pair<int, int> pooled_size(int h, int w, int stages) {
  for (int i = 0; i < stages; ++i) {
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

// identity-transform entries for the emitted portion of the matrix head
std::vector<double> identity_head_bias(const ArchSpec& spec, int out_dim) {
  std::vector<double> bias(static_cast<std::size_t>(out_dim), 0.0);
  if (spec.kind == "cnn-converter") {
    if (spec.family == TransformFamily::euclidean) return bias;  // angle/shift zero
    const int side = 3;
    const int rows = out_dim / side;
    for (int r = 0; r < rows; ++r) bias[static_cast<std::size_t>(r) * side + r] = 1.0;
    return bias;
  }
  if (spec.kind == "lstm-converter") {
    const int side = spec.features + 1;
    const int rows = out_dim / side;
    for (int r = 0; r < rows; ++r) bias[static_cast<std::size_t>(r) * side + r] = 1.0;
    return bias;
  }
  return bias;
}

int converter_head_dim(const ArchSpec& spec) {
  if (spec.kind == "cnn-converter") {
    switch (spec.family) {
      case TransformFamily::euclidean: return 3;               // angle, tx, ty
      case TransformFamily::affine: return 6;                  // top two rows
      default: return 9;
    }
  }
  if (spec.kind == "lstm-converter") {
    const int side = spec.features + 1;
    return spec.family == TransformFamily::affine ? spec.features * side : side * side;
  }
  if (spec.kind == "direct-lstm-converter") return spec.features;
  if (spec.kind == "direct-cnn-converter") return spec.input_h * spec.input_w;
  throw std::invalid_argument("converter_head_dim: unknown kind " + spec.kind);
}

}  // namespace

Model build_model(const ArchSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "model:" + spec.kind));
  Model m;
  m.spec = spec;
  if (spec.classes <= 0 || spec.hidden <= 0 || spec.features <= 0) {
    throw std::invalid_argument("build_model: sizes must be positive");
  }
  if (spec.kind == "cnn-classifier") {
    if (spec.channels.empty()) throw std::invalid_argument("build_model: channels required");
    int cin = 1;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      add_conv_stage(m.params, "conv" + std::to_string(i + 1), cin,
                     spec.channels[i], spec.kernel, rng);
      cin = spec.channels[i];
    }
    const auto [fh, fw] = pooled_size(spec.input_h, spec.input_w,
                                      static_cast<int>(spec.channels.size()));
    if (fh == 0 || fw == 0) throw std::invalid_argument("build_model: input too small");
    add_fc(m.params, "fc", cin * fh * fw, spec.classes, rng);
    m.head_names = {"fc.w", "fc.b"};
    return m;
  }
  if (spec.kind == "lstm-tagger") {
    add_lstm(m.params, spec.features, spec.hidden, rng);
    add_fc(m.params, "fc", spec.hidden, spec.classes, rng);
    m.head_names = {"fc.w", "fc.b"};
    return m;
  }
  throw std::invalid_argument("build_model: unknown kind " + spec.kind);
}

Converter build_converter(const ArchSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "converter:" + spec.kind));
  Converter c;
  c.spec = spec;
  const int head_dim = converter_head_dim(spec);
  if (spec.kind == "cnn-converter" || spec.kind == "direct-cnn-converter") {
    if (spec.channels.empty()) throw std::invalid_argument("build_converter: channels required");
    int cin = 1;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      add_conv_stage(c.params, "conv" + std::to_string(i + 1), cin,
                     spec.channels[i], spec.kernel, rng);
      cin = spec.channels[i];
    }
    const auto [fh, fw] = pooled_size(spec.input_h, spec.input_w,
                                      static_cast<int>(spec.channels.size()));
    if (fh == 0 || fw == 0) throw std::invalid_argument("build_converter: input too small");
    const int flat = cin * fh * fw;
    if (spec.kind == "direct-cnn-converter") {
      // bottleneck keeps the direct image head reasonably small
      add_fc(c.params, "mid", flat, 64, rng);
      add_fc(c.params, "head", 64, head_dim, rng);
    } else {
      add_fc(c.params, "head", flat, head_dim, rng);
      c.params.get("head.b")->data = identity_head_bias(spec, head_dim);
    }
    return c;
  }
  if (spec.kind == "lstm-converter" || spec.kind == "direct-lstm-converter") {
    add_lstm(c.params, spec.features, spec.hidden, rng);
    add_fc(c.params, "head", spec.hidden, head_dim, rng);
    if (spec.kind == "lstm-converter") {
      c.params.get("head.b")->data = identity_head_bias(spec, head_dim);
    }
    return c;
  }
  throw std::invalid_argument("build_converter: unknown kind " + spec.kind);
}

// ---- forward passes --------------------------------------------------------------

namespace {

TensorPtr conv_stack(const ParamSet& params, const ArchSpec& spec, const TensorPtr& image) {
  TensorPtr x = reshape(image, {1, spec.input_h, spec.input_w});
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    x = maxpool2x2(relu(conv2d(x, params.get(name + ".w"), params.get(name + ".b"))));
  }
  return reshape(x, {x->size()});
}

TensorPtr fc_apply(const ParamSet& params, const std::string& name, const TensorPtr& x) {
  return add(matmul(params.get(name + ".w"), x), params.get(name + ".b"));
}

std::vector<TensorPtr> lstm_roll(const ParamSet& params, const TensorPtr& frames, int hidden) {
  if (frames->shape.size() != 2) throw std::invalid_argument("sequence input must be [l,f]");
  const int len = frames->rows();
  if (len == 0) throw std::invalid_argument("sequence of length 0");
  LstmWeights w{params.get("lstm.wx"), params.get("lstm.wh"), params.get("lstm.b")};
  TensorPtr h = Tensor::zeros({hidden});
  TensorPtr c = Tensor::zeros({hidden});
  std::vector<TensorPtr> hs;
  hs.reserve(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) {
    auto [hn, cn] = lstm_cell(row(frames, t), h, c, w);
    h = hn;
    c = cn;
    hs.push_back(h);
  }
  return hs;
}

}  // namespace

TensorPtr Model::forward_image(const TensorPtr& image) const {
  if (spec.kind != "cnn-classifier") throw std::logic_error("forward_image: not an image model");
  return fc_apply(params, "fc", conv_stack(params, spec, image));
}

TensorPtr Model::forward_sequence(const TensorPtr& frames) const {
  if (spec.kind != "lstm-tagger") throw std::logic_error("forward_sequence: not a sequence model");
  const std::vector<TensorPtr> hs = lstm_roll(params, frames, spec.hidden);
  std::vector<TensorPtr> logits;
  logits.reserve(hs.size());
  for (const auto& h : hs) logits.push_back(fc_apply(params, "fc", h));
  return stack_rows(logits);
}

std::vector<TensorPtr> Model::head_params() const {
  std::vector<TensorPtr> out;
  for (const auto& n : head_names) out.push_back(params.get(n));
  return out;
}

std::vector<TensorPtr> Model::body_params() const {
  std::vector<TensorPtr> out;
  for (const auto& [n, t] : params.items()) {
    bool is_head = false;
    for (const auto& h : head_names) is_head = is_head || h == n;
    if (!is_head) out.push_back(t);
  }
  return out;
}

void Model::set_trainable_head_only() {
  for (const auto& [n, t] : params.items()) t->requires_grad = false;
  for (const auto& t : head_params()) t->requires_grad = true;
}

void Model::set_trainable_all() {
  for (const auto& [n, t] : params.items()) t->requires_grad = true;
}

bool Converter::for_images() const {
  return spec.kind == "cnn-converter" || spec.kind == "direct-cnn-converter";
}

TensorPtr Converter::transform_for_image(const TensorPtr& image) const {
  if (spec.kind != "cnn-converter") throw std::logic_error("transform_for_image: wrong converter");
  const TensorPtr head = fc_apply(params, "head", conv_stack(params, spec, image));
  switch (spec.family) {
    case TransformFamily::euclidean:
      return assemble_euclidean(slice_vec(head, 0, 1), slice_vec(head, 1, 1),
                                slice_vec(head, 2, 1));
    case TransformFamily::affine: {
      const TensorPtr fixed = Tensor::make({3}, {0.0, 0.0, 1.0});
      return reshape(concat_vec(head, fixed), {3, 3});
    }
    default:
      return reshape(head, {3, 3});
  }
}

TensorPtr Converter::direct_image(const TensorPtr& image) const {
  if (spec.kind != "direct-cnn-converter") throw std::logic_error("direct_image: wrong converter");
  const TensorPtr mid = relu(fc_apply(params, "mid", conv_stack(params, spec, image)));
  return reshape(fc_apply(params, "head", mid), {spec.input_h, spec.input_w});
}

TensorPtr Converter::matrix_entries_for_sequence(const TensorPtr& frames) const {
  if (spec.kind != "lstm-converter") {
    throw std::logic_error("matrix_entries_for_sequence: wrong converter");
  }
  const std::vector<TensorPtr> hs = lstm_roll(params, frames, spec.hidden);
  std::vector<TensorPtr> entries;
  entries.reserve(hs.size());
  for (const auto& h : hs) {
    TensorPtr e = fc_apply(params, "head", h);
    if (spec.activation == OutputActivation::softmax) e = softmax_rows(e);
    entries.push_back(e);
  }
  return stack_rows(entries);
}

TensorPtr Converter::direct_sequence(const TensorPtr& frames) const {
  if (spec.kind != "direct-lstm-converter") throw std::logic_error("direct_sequence: wrong converter");
  const std::vector<TensorPtr> hs = lstm_roll(params, frames, spec.hidden);
  std::vector<TensorPtr> out;
  out.reserve(hs.size());
  for (const auto& h : hs) out.push_back(fc_apply(params, "head", h));
  return stack_rows(out);
}

TensorPtr Converter::convert_image(const TensorPtr& image) const {
  if (spec.kind == "cnn-converter") return grid_sample(image, transform_for_image(image));
  if (spec.kind == "direct-cnn-converter") return direct_image(image);
  throw std::logic_error("convert_image: not an image converter");
}

TensorPtr Converter::convert_sequence(const TensorPtr& frames) const {
  const int f = spec.features;
  const int side = f + 1;
  const int len = frames->rows();
  std::vector<TensorPtr> rows_h;
  rows_h.reserve(static_cast<std::size_t>(len));
  if (spec.kind == "direct-lstm-converter") {
    const TensorPtr direct = direct_sequence(frames);
    const TensorPtr one = Tensor::scalar(1.0);
    for (int t = 0; t < len; ++t) rows_h.push_back(concat_vec(row(direct, t), one));
    return stack_rows(rows_h);
  }
  if (spec.kind != "lstm-converter") throw std::logic_error("convert_sequence: wrong converter");
  const TensorPtr entries = matrix_entries_for_sequence(frames);
  TensorPtr fixed_row;
  if (spec.family == TransformFamily::affine) {
    std::vector<double> fixed(static_cast<std::size_t>(side), 0.0);
    fixed.back() = 1.0;
    fixed_row = Tensor::make({side}, std::move(fixed));
  }
  for (int t = 0; t < len; ++t) {
    TensorPtr e = row(entries, t);
    if (fixed_row) e = concat_vec(e, fixed_row);
    const TensorPtr transform = reshape(e, {side, side});
    rows_h.push_back(apply_frame_h(transform, row(frames, t)));
  }
  return stack_rows(rows_h);  // [l, f+1] homogeneous converted frames
}

std::vector<TransformMatrix> Converter::matrices_for_sequence(const LabeledSequence& seq) const {
  const TensorPtr entries = matrix_entries_for_sequence(sequence_tensor(seq));
  const int side = spec.features + 1;
  std::vector<TransformMatrix> out;
  out.reserve(static_cast<std::size_t>(entries->rows()));
  for (int t = 0; t < entries->rows(); ++t) {
    TransformMatrix m(spec.features, spec.family);
    if (spec.family == TransformFamily::affine) {
      for (int r = 0; r < spec.features; ++r) {
        for (int cc = 0; cc < side; ++cc) m.at(r, cc) = entries->at(t, r * side + cc);
      }
      m.at(spec.features, spec.features) = 1.0;
    } else {
      for (int i = 0; i < side * side; ++i) m.entries[static_cast<std::size_t>(i)] = entries->at(t, i);
    }
    if (!m.family_valid()) {
      throw std::runtime_error("converter output violates its transform family");
    }
    out.push_back(std::move(m));
  }
  return out;
}

TransformMatrix Converter::matrix_for_image(const std::vector<double>& image, int h, int w) const {
  const TensorPtr t = transform_for_image(image_tensor(image, h, w));
  TransformMatrix m(2, spec.family);
  m.entries = t->data;
  if (!m.family_valid()) throw std::runtime_error("converter output violates its transform family");
  return m;
}

void Converter::set_head_identity() {
  if (direct()) throw std::logic_error("set_head_identity: direct converters have no identity");
  const TensorPtr w = params.get("head.w");
  std::fill(w->data.begin(), w->data.end(), 0.0);
  const TensorPtr b = params.get("head.b");
  b->data = identity_head_bias(spec, b->size());
}

void Converter::set_trainable(bool trainable) {
  for (const auto& [n, t] : params.items()) t->requires_grad = trainable;
}

// ---- checkpoints -----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'X', 'F', 'E', 'R', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double d) {
  write_u64(out, std::bit_cast<std::uint64_t>(d));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

void save_params(std::ostream& out, const ArchSpec& spec, const ParamSet& params,
                 std::uint32_t kind_tag) {
  out.write(kMagic, 8);
  write_u32(out, 1);  // version
  write_u32(out, kind_tag);
  const std::string arch = spec.to_string();
  write_u32(out, static_cast<std::uint32_t>(arch.size()));
  out.write(arch.data(), static_cast<std::streamsize>(arch.size()));
  write_u64(out, static_cast<std::uint64_t>(params.value_count()));
  for (const auto& [name, t] : params.items()) {
    for (const double v : t->data) write_f64(out, v);
  }
}

ArchSpec load_header(std::istream& in, std::uint32_t expect_tag) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = read_u32(in);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t tag = read_u32(in);
  if (tag != expect_tag) throw std::runtime_error("checkpoint: wrong artifact kind");
  const std::uint32_t len = read_u32(in);
  std::string arch(len, '\0');
  in.read(arch.data(), len);
  if (!in) throw std::runtime_error("checkpoint: truncated descriptor");
  return ArchSpec::from_string(arch);
}

void load_values(std::istream& in, ParamSet& params) {
  const std::uint64_t count = read_u64(in);
  if (count != static_cast<std::uint64_t>(params.value_count())) {
    throw std::runtime_error("checkpoint: value count mismatch");
  }
  for (const auto& [name, t] : params.items()) {
    for (double& v : t->data) v = read_f64(in);
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_params(out, model.spec, model.params, 0);
  if (!out) throw std::runtime_error("write failed for " + path);
}

void save_checkpoint(const Converter& conv, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_params(out, conv.spec, conv.params, 1);
  if (!out) throw std::runtime_error("write failed for " + path);
}

Model load_model_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const ArchSpec spec = load_header(in, 0);
  Model m = build_model(spec, 0);
  load_values(in, m.params);
  return m;
}

Converter load_converter_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const ArchSpec spec = load_header(in, 1);
  Converter c = build_converter(spec, 0);
  load_values(in, c.params);
  return c;
}

// ---- tensor helpers ----------------------------------------------------------------

TensorPtr image_tensor(const std::vector<double>& image, int h, int w) {
  return Tensor::make({h, w}, image);
}

TensorPtr sequence_tensor(const LabeledSequence& seq) {
  return Tensor::make({seq.length(), seq.features}, seq.frames);
}

}  // namespace xfer
