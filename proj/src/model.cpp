#include "dad/model.hpp"

#include <cmath>

#include "json.hpp"

using nlohmann::json;

namespace dad::model {

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  const real std = std::sqrt(2.0 / (real(in_ch) * k * k));
  w = Param(Tensor::randn({out_ch, in_ch, k, k}, rng, std));
  b = Param(Tensor({out_ch}));
}

Var Conv2d::forward(Tape& t, Var x) const {
  return t.conv2d(x, t.use(const_cast<Param&>(w)), t.use(const_cast<Param&>(b)), stride, pad);
}

Linear::Linear(int in, int out, Rng& rng) {
  const real std = std::sqrt(1.0 / real(in));
  w = Param(Tensor::randn({out, in}, rng, std));
  b = Param(Tensor({out}));
}

Var Linear::forward(Tape& t, Var x) const {
  return t.linear(x, t.use(const_cast<Param&>(w)), t.use(const_cast<Param&>(b)));
}

BatchNorm2d::BatchNorm2d(int channels) {
  gamma = Param(Tensor::full({channels}, 1.0));
  beta = Param(Tensor({channels}));
  running_mean = Tensor({channels});
  running_var = Tensor::full({channels}, 1.0);
}

Var BatchNorm2d::forward(Tape& t, Var x, bool train) {
  const int C = t.val(x).dim(1);
  check(C == gamma.value.dim(0), "batchnorm: channel mismatch");
  if (train) {
    Var m = t.channel_mean(x);
    Var xc = t.channel_add(x, t.scale(m, -1.0));
    Var var = t.channel_mean(t.mul(xc, xc));
    const Tensor& mv = t.val(m);
    const Tensor& vv = t.val(var);
    for (int c = 0; c < C; ++c) {
      running_mean.v[size_t(c)] = (1 - momentum) * running_mean.v[size_t(c)] + momentum * mv.v[size_t(c)];
      running_var.v[size_t(c)] = (1 - momentum) * running_var.v[size_t(c)] + momentum * vv.v[size_t(c)];
    }
    Var xhat = t.channel_mul(xc, t.rsqrt(var, eps));
    return t.channel_add(t.channel_mul(xhat, t.use(gamma)), t.use(beta));
  }
  // eval: fold running stats into a per-channel affine
  Tensor scale({C}), shift({C});
  for (int c = 0; c < C; ++c) {
    const real s = gamma.value.v[size_t(c)] / std::sqrt(running_var.v[size_t(c)] + eps);
    scale.v[size_t(c)] = s;
    shift.v[size_t(c)] = beta.value.v[size_t(c)] - running_mean.v[size_t(c)] * s;
  }
  return t.channel_add(t.channel_mul(x, t.constant(scale)), t.constant(shift));
}

Tensor Classifier::logits(const Tensor& images, BnObserver* obs) {
  Tape t;
  Var x = t.leaf(images, false);
  Var out = forward(t, x, false, obs);
  return t.val(out);
}

std::vector<int> Classifier::predict(const Tensor& images) { return argmax_rows(logits(images)); }

int64_t Classifier::param_count() {
  int64_t n = 0;
  for (Param* p : params()) n += p->value.numel();
  return n;
}

Fingerprint Classifier::fingerprint() {
  std::vector<uint8_t> bytes;
  const std::string head = arch() + "\n" + config_json() + "\n";
  put_bytes(bytes, head.data(), head.size());
  for (Param* p : params()) put_bytes(bytes, p->value.v.data(), p->value.v.size() * sizeof(real));
  return fingerprint_bytes(bytes.data(), bytes.size());
}

Tensor temp_softmax(const Tensor& logits, real t) {
  check(t > 0, "temp_softmax: temperature must be positive");
  check(logits.ndim() == 2, "temp_softmax: expected [B,K] logits");
  const int B = logits.dim(0), K = logits.dim(1);
  check(K >= 1, "temp_softmax: need at least one class");
  Tensor out({B, K});
  for (int i = 0; i < B; ++i) {
    const real* row = logits.data() + size_t(i) * K;
    real mx = row[0] / t;
    for (int j = 1; j < K; ++j) mx = std::max(mx, row[j] / t);
    real s = 0;
    for (int j = 0; j < K; ++j) {
      out.v[size_t(i) * K + j] = std::exp(row[j] / t - mx);
      s += out.v[size_t(i) * K + j];
    }
    for (int j = 0; j < K; ++j) out.v[size_t(i) * K + j] /= s;
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  check(logits.ndim() == 2, "argmax_rows: expected [B,K]");
  const int B = logits.dim(0), K = logits.dim(1);
  check(K >= 1, "argmax_rows: need at least one class");
  std::vector<int> out(size_t(B));
  for (int i = 0; i < B; ++i) {
    const real* row = logits.data() + size_t(i) * K;
    int best = 0;
    for (int j = 1; j < K; ++j)
      if (row[j] > row[best]) best = j;
    out[size_t(i)] = best;
  }
  return out;
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  check(!images.empty(), "stack_images: empty list");
  const Tensor& first = *images[0];
  check(first.ndim() == 3, "stack_images: expected [C,H,W] items");
  Tensor out({int(images.size()), first.dim(0), first.dim(1), first.dim(2)});
  for (size_t i = 0; i < images.size(); ++i) {
    check(images[i]->same_shape(first), "stack_images: inconsistent shapes");
    std::copy(images[i]->v.begin(), images[i]->v.end(), out.v.begin() + int64_t(i) * first.numel());
  }
  return out;
}

namespace {

class ConvNet : public Classifier {
 public:
  ConvNet(std::string arch_name, std::vector<int> widths, std::vector<int> strides,
          int num_classes, int in_channels, uint64_t seed)
      : arch_(std::move(arch_name)),
        widths_(std::move(widths)),
        strides_(std::move(strides)),
        classes_(num_classes),
        in_ch_(in_channels),
        seed_(seed) {
    check(widths_.size() == strides_.size(), "convnet: widths/strides mismatch");
    Rng rng(seed);
    int ch = in_ch_;
    for (size_t i = 0; i < widths_.size(); ++i) {
      convs_.emplace_back(ch, widths_[i], 3, strides_[i], 1, rng);
      bns_.emplace_back(widths_[i]);
      ch = widths_[i];
    }
    head_ = Linear(ch, classes_, rng);
  }

  std::string arch() const override { return arch_; }

  std::string config_json() const override {
    json j;
    j["widths"] = widths_;
    j["strides"] = strides_;
    j["num_classes"] = classes_;
    j["in_channels"] = in_ch_;
    j["seed"] = seed_;
    return j.dump();
  }

  int num_classes() const override { return classes_; }
  int in_channels() const override { return in_ch_; }
  int norm_layer_count() const override { return int(bns_.size()); }

  Var forward(Tape& t, Var x, bool train, BnObserver* obs) override {
    const Tensor& tx = t.val(x);
    check(tx.ndim() == 4, "convnet: expected [B,C,H,W] input, got " + shape_str(tx.shape));
    check(tx.dim(1) == in_ch_, "convnet: expected " + std::to_string(in_ch_) + " channels");
    if (obs) obs->observe(0, tx);
    for (size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i].forward(t, x);
      if (obs) obs->observe(int(i) + 1, t.val(x));
      x = bns_[i].forward(t, x, train);
      x = t.relu(x);
    }
    x = t.global_avgpool(x);
    return head_.forward(t, x);
  }

  std::vector<Param*> params() override {
    std::vector<Param*> out;
    for (size_t i = 0; i < convs_.size(); ++i) {
      out.push_back(&convs_[i].w);
      out.push_back(&convs_[i].b);
      out.push_back(&bns_[i].gamma);
      out.push_back(&bns_[i].beta);
    }
    out.push_back(&head_.w);
    out.push_back(&head_.b);
    return out;
  }

  // running statistics ride along in the checkpoint blob
  std::vector<Tensor*> aux_tensors() {
    std::vector<Tensor*> out;
    for (auto& bn : bns_) {
      out.push_back(&bn.running_mean);
      out.push_back(&bn.running_var);
    }
    return out;
  }

 private:
  std::string arch_;
  std::vector<int> widths_, strides_;
  int classes_, in_ch_;
  uint64_t seed_;
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm2d> bns_;
  Linear head_;

  friend void model::save_checkpoint(Classifier&, const std::string&);
  friend std::unique_ptr<Classifier> model::load_checkpoint(const std::string&);
};

class LinearNet : public Classifier {
 public:
  LinearNet(int in_channels, int hw, int num_classes, uint64_t seed)
      : in_ch_(in_channels), hw_(hw), classes_(num_classes), seed_(seed) {
    Rng rng(seed);
    head_ = Linear(in_channels * hw * hw, num_classes, rng);
  }

  std::string arch() const override { return "linear"; }
  std::string config_json() const override {
    json j;
    j["in_channels"] = in_ch_;
    j["hw"] = hw_;
    j["num_classes"] = classes_;
    j["seed"] = seed_;
    return j.dump();
  }
  int num_classes() const override { return classes_; }
  int in_channels() const override { return in_ch_; }

  Var forward(Tape& t, Var x, bool, BnObserver* obs) override {
    const Tensor& tx = t.val(x);
    check(tx.ndim() == 4, "linear: expected [B,C,H,W] input");
    if (obs) obs->observe(0, tx);
    const int B = tx.dim(0);
    check(tx.numel() == int64_t(B) * in_ch_ * hw_ * hw_, "linear: bad input size");
    return head_.forward(t, t.reshape(x, {B, in_ch_ * hw_ * hw_}));
  }

  std::vector<Param*> params() override { return {&head_.w, &head_.b}; }

  Linear head_;

 private:
  int in_ch_, hw_, classes_;
  uint64_t seed_;
};

class Mlp3 : public Classifier {
 public:
  Mlp3(int in_channels, int hw, int hidden, int num_classes, uint64_t seed)
      : in_ch_(in_channels), hw_(hw), hidden_(hidden), classes_(num_classes), seed_(seed) {
    Rng rng(seed);
    l1_ = Linear(in_channels * hw * hw, hidden, rng);
    l2_ = Linear(hidden, hidden, rng);
    l3_ = Linear(hidden, num_classes, rng);
  }

  std::string arch() const override { return "mlp3"; }
  std::string config_json() const override {
    json j;
    j["in_channels"] = in_ch_;
    j["hw"] = hw_;
    j["hidden"] = hidden_;
    j["num_classes"] = classes_;
    j["seed"] = seed_;
    return j.dump();
  }
  int num_classes() const override { return classes_; }
  int in_channels() const override { return in_ch_; }

  Var forward(Tape& t, Var x, bool, BnObserver* obs) override {
    const Tensor& tx = t.val(x);
    check(tx.ndim() == 4, "mlp3: expected [B,C,H,W] input");
    if (obs) obs->observe(0, tx);
    const int B = tx.dim(0);
    check(tx.numel() == int64_t(B) * in_ch_ * hw_ * hw_, "mlp3: bad input size");
    Var h = t.relu(l1_.forward(t, t.reshape(x, {B, in_ch_ * hw_ * hw_})));
    h = t.relu(l2_.forward(t, h));
    return l3_.forward(t, h);
  }

  std::vector<Param*> params() override {
    return {&l1_.w, &l1_.b, &l2_.w, &l2_.b, &l3_.w, &l3_.b};
  }

 private:
  int in_ch_, hw_, hidden_, classes_;
  uint64_t seed_;
  Linear l1_, l2_, l3_;
};

}  // namespace

std::unique_ptr<Classifier> make_small_cnn(int num_classes, uint64_t seed) {
  return std::make_unique<ConvNet>("small_cnn", std::vector<int>{12, 24, 32, 48},
                                   std::vector<int>{1, 2, 2, 2}, num_classes, 3, seed);
}

std::unique_ptr<Classifier> make_wide_cnn(int num_classes, uint64_t seed) {
  return std::make_unique<ConvNet>("wide_cnn", std::vector<int>{24, 48, 48, 72, 96},
                                   std::vector<int>{1, 2, 1, 2, 2}, num_classes, 3, seed);
}

std::unique_ptr<Classifier> make_linear(int in_channels, int hw, int num_classes, uint64_t seed) {
  return std::make_unique<LinearNet>(in_channels, hw, num_classes, seed);
}

std::unique_ptr<Classifier> make_mlp3(int in_channels, int hw, int hidden, int num_classes,
                                      uint64_t seed) {
  return std::make_unique<Mlp3>(in_channels, hw, hidden, num_classes, seed);
}

std::unique_ptr<Classifier> make_classifier(const std::string& arch, const std::string& config_json_str) {
  const json j = json::parse(config_json_str);
  if (arch == "small_cnn" || arch == "wide_cnn" || arch == "convnet") {
    return std::make_unique<ConvNet>(arch, j["widths"].get<std::vector<int>>(),
                                     j["strides"].get<std::vector<int>>(),
                                     j["num_classes"].get<int>(), j["in_channels"].get<int>(),
                                     j["seed"].get<uint64_t>());
  }
  if (arch == "linear")
    return std::make_unique<LinearNet>(j["in_channels"].get<int>(), j["hw"].get<int>(),
                                       j["num_classes"].get<int>(), j["seed"].get<uint64_t>());
  if (arch == "mlp3")
    return std::make_unique<Mlp3>(j["in_channels"].get<int>(), j["hw"].get<int>(),
                                  j["hidden"].get<int>(), j["num_classes"].get<int>(),
                                  j["seed"].get<uint64_t>());
  fail("unknown architecture: " + arch);
}

static constexpr char kModelMagic[4] = {'D', 'A', 'D', 'M'};
static constexpr uint16_t kModelVersion = 1;

namespace {

std::vector<Tensor*> checkpoint_aux(Classifier& m) {
  if (auto* cn = dynamic_cast<ConvNet*>(&m)) return cn->aux_tensors();
  return {};
}

}  // namespace

void save_checkpoint(Classifier& model, const std::string& path) {
  json header;
  header["arch"] = model.arch();
  header["config"] = model.config_json();
  header["param_count"] = model.param_count();
  const std::string cfg_digest =
      fingerprint_bytes(model.config_json().data(), model.config_json().size()).hex();
  header["config_hash"] = cfg_digest;
  int64_t aux_count = 0;
  for (Tensor* t : checkpoint_aux(model)) aux_count += t->numel();
  header["aux_count"] = aux_count;
  const std::string hs = header.dump();

  std::vector<uint8_t> bytes;
  put_bytes(bytes, kModelMagic, 4);
  put_pod(bytes, kModelVersion);
  put_pod(bytes, uint32_t(hs.size()));
  put_bytes(bytes, hs.data(), hs.size());
  for (Param* p : model.params()) put_bytes(bytes, p->value.v.data(), p->value.v.size() * sizeof(real));
  for (Tensor* t : checkpoint_aux(model)) put_bytes(bytes, t->v.data(), t->v.size() * sizeof(real));
  write_file_bytes(path, bytes);
}

std::unique_ptr<Classifier> load_checkpoint(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes);
  char magic[4];
  r.read(magic, 4);
  check(std::memcmp(magic, kModelMagic, 4) == 0, "not a model checkpoint: " + path);
  const uint16_t version = r.pod<uint16_t>();
  check(version == kModelVersion, "unsupported checkpoint version in " + path);
  const uint32_t hlen = r.pod<uint32_t>();
  std::string hs(hlen, '\0');
  r.read(hs.data(), hlen);
  const json header = json::parse(hs);

  auto m = make_classifier(header["arch"].get<std::string>(), header["config"].get<std::string>());
  check(m->param_count() == header["param_count"].get<int64_t>(),
        "checkpoint parameter count mismatch: " + path);
  for (Param* p : m->params()) r.read(p->value.v.data(), p->value.v.size() * sizeof(real));
  for (Tensor* t : checkpoint_aux(*m)) r.read(t->v.data(), t->v.size() * sizeof(real));
  return m;
}

}  // namespace dad::model
