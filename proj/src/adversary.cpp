#include "dad/adversary.hpp"

#include <cmath>

namespace dad::adversary {

Norm norm_from_name(const std::string& name) {
  if (name == "linf" || name == "inf" || name == "Linf") return Norm::Linf;
  if (name == "l2" || name == "L2") return Norm::L2;
  fail("unknown attack norm: " + name);
}

std::string norm_name(Norm n) { return n == Norm::Linf ? "linf" : "l2"; }

void round_to_f32(Tensor& t) {
  for (auto& x : t.v) x = real(float(x));
}

void round_to_f32(std::vector<real>& v) {
  for (auto& x : v) x = real(float(x));
}

namespace {

// Nudge xp toward x0 until |xp - x0| <= eps holds in double arithmetic.
// The projection itself leaves at most an ulp of slack; this removes it.
real snap_into_interval(real xp, real x0, real eps) {
  while (std::abs(xp - x0) > eps) xp = std::nextafter(xp, x0);
  return xp;
}

}  // namespace

Tensor attack_fn(const GradFn& fn, const Tensor& x0, const std::vector<int>& labels,
                 const AttackConfig& cfg) {
  cfg.validate();
  check(x0.ndim() == 4, "attack: expected [B,C,H,W] input");
  const int B = x0.dim(0);
  check(B == int(labels.size()), "attack: label count mismatch");
  const int64_t per = x0.numel() / std::max(1, B);

  Tensor x = x0;
  for (int step = 0; step < cfg.steps; ++step) {
    auto [loss, g] = fn(x, labels);
    (void)loss;
    check(g.same_shape(x), "attack: gradient shape mismatch");
    check(g.all_finite(), "attack: non-finite gradient");

    if (cfg.norm == Norm::Linf) {
      for (int64_t i = 0; i < x.numel(); ++i) {
        const real gi = g.v[size_t(i)];
        const real s = gi > 0 ? 1.0 : (gi < 0 ? -1.0 : 0.0);
        x.v[size_t(i)] += cfg.step_size * s;
      }
    } else {
      for (int b = 0; b < B; ++b) {
        real nrm = 0;
        for (int64_t i = 0; i < per; ++i) {
          const real gi = g.v[size_t(b) * per + i];
          nrm += gi * gi;
        }
        nrm = std::sqrt(nrm);
        if (nrm == 0) continue;
        for (int64_t i = 0; i < per; ++i)
          x.v[size_t(b) * per + i] += cfg.step_size * g.v[size_t(b) * per + i] / nrm;
      }
    }

    // project onto the epsilon ball around x0, then clip to [0,1]
    if (cfg.norm == Norm::Linf) {
      for (int64_t i = 0; i < x.numel(); ++i) {
        const real lo = x0.v[size_t(i)] - cfg.epsilon;
        const real hi = x0.v[size_t(i)] + cfg.epsilon;
        real v = std::clamp(x.v[size_t(i)], lo, hi);
        v = std::clamp(v, real(0), real(1));
        x.v[size_t(i)] = snap_into_interval(v, x0.v[size_t(i)], cfg.epsilon);
      }
    } else {
      for (int b = 0; b < B; ++b) {
        real* xb = x.data() + size_t(b) * per;
        const real* ob = x0.data() + size_t(b) * per;
        real nrm2 = 0;
        for (int64_t i = 0; i < per; ++i) {
          const real d = xb[i] - ob[i];
          nrm2 += d * d;
        }
        real nrm = std::sqrt(nrm2);
        // rescale until the measured norm is within budget
        while (nrm > cfg.epsilon) {
          const real scale = cfg.epsilon / nrm;
          nrm2 = 0;
          for (int64_t i = 0; i < per; ++i) {
            const real d = (xb[i] - ob[i]) * scale;
            xb[i] = ob[i] + d;
            nrm2 += (xb[i] - ob[i]) * (xb[i] - ob[i]);
          }
          const real next = std::sqrt(nrm2);
          if (next >= nrm) {  // no progress; pull strictly inside
            for (int64_t i = 0; i < per; ++i)
              xb[i] = ob[i] + (xb[i] - ob[i]) * (1 - 1e-12);
            nrm2 = 0;
            for (int64_t i = 0; i < per; ++i) nrm2 += (xb[i] - ob[i]) * (xb[i] - ob[i]);
            nrm = std::sqrt(nrm2);
          } else {
            nrm = next;
          }
        }
        for (int64_t i = 0; i < per; ++i) xb[i] = std::clamp(xb[i], real(0), real(1));
      }
    }
  }
  return x;
}

Tensor attack(model::Classifier& m, const Tensor& x, const std::vector<int>& labels,
              const AttackConfig& cfg) {
  GradFn fn = [&m](const Tensor& images, const std::vector<int>& y) {
    Tape t;
    Var xv = t.leaf(images, true);
    Var logits = m.forward(t, xv, false);
    Var loss = t.cross_entropy(logits, y);
    t.backward(loss);
    return std::make_pair(t.val(loss).v[0], t.grad(xv));
  };
  return attack_fn(fn, x, labels, cfg);
}

GradFn through_discretizer(model::Classifier& m, const vq::Discretizer& disc) {
  return [&m, &disc](const Tensor& images, const std::vector<int>& y) {
    Tape t;
    Var xv = t.leaf(images, true);
    Var recon = disc.discretize(t, xv);
    Var logits = m.forward(t, recon, false);
    Var loss = t.cross_entropy(logits, y);
    t.backward(loss);
    return std::make_pair(t.val(loss).v[0], t.grad(xv));
  };
}

std::vector<AdversarialRecord> dad_generate(model::Classifier& teacher,
                                            const vq::Discretizer& disc, const Tensor& images,
                                            const std::vector<int>& labels,
                                            const std::vector<uint64_t>& sample_ids,
                                            const AttackConfig& cfg, uint64_t global_seed) {
  check(images.ndim() == 4, "dad_generate: expected [B,C,H,W] images");
  const int B = images.dim(0);
  check(B == int(labels.size()) && B == int(sample_ids.size()), "dad_generate: size mismatch");
  const int K = teacher.num_classes();

  const Tensor x_q = disc.discretize_value(images);
  const Tensor x_adv = attack_fn(through_discretizer(teacher, disc), x_q, labels, cfg);
  Tensor out = disc.discretize_value(x_adv);
  round_to_f32(out);

  const Tensor logits_aug = teacher.logits(out);
  const Tensor logits_clean = teacher.logits(images);
  const std::vector<int> preds = model::argmax_rows(logits_aug);

  const int64_t per = out.numel() / std::max(1, B);
  std::vector<AdversarialRecord> recs(size_t(B));
  for (int b = 0; b < B; ++b) {
    AdversarialRecord& r = recs[size_t(b)];
    r.sample_id = sample_ids[size_t(b)];
    r.label = uint16_t(labels[size_t(b)]);
    r.gen_seed = derive_seed(global_seed, r.sample_id);
    r.accepted = preds[size_t(b)] == labels[size_t(b)];
    r.image = Tensor({images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(out.data() + size_t(b) * per, per, r.image.data());
    r.teacher_logits_aug.assign(logits_aug.data() + size_t(b) * K,
                                logits_aug.data() + size_t(b + 1) * K);
    r.teacher_logits_clean.assign(logits_clean.data() + size_t(b) * K,
                                  logits_clean.data() + size_t(b + 1) * K);
    round_to_f32(r.teacher_logits_aug);
    round_to_f32(r.teacher_logits_clean);
  }
  return recs;
}

Tensor student_attack(model::Classifier& student, const vq::Discretizer& disc, const Tensor& images,
                      const std::vector<int>& labels, const AttackConfig& cfg) {
  const Tensor x_q = disc.discretize_value(images);
  const Tensor x_adv = attack_fn(through_discretizer(student, disc), x_q, labels, cfg);
  return disc.discretize_value(x_adv);
}

std::vector<uint64_t> CacheFile::accepted_ids() const {
  std::vector<uint64_t> out;
  for (const auto& r : records)
    if (r.accepted) out.push_back(r.sample_id);
  return out;
}

const AdversarialRecord* CacheFile::find(uint64_t sample_id) const {
  auto it = std::lower_bound(records.begin(), records.end(), sample_id,
                             [](const AdversarialRecord& r, uint64_t id) { return r.sample_id < id; });
  if (it == records.end() || it->sample_id != sample_id) return nullptr;
  return &*it;
}

CacheFile build_cache(const data::Dataset& dataset, model::Classifier& teacher,
                      const vq::Discretizer& disc, const CacheBuildConfig& cfg) {
  cfg.attack.validate();
  check(teacher.frozen, "build_cache: teacher must be frozen");

  CacheFile cache;
  cache.header.teacher_fp = teacher.fingerprint();
  cache.header.discretizer_fp = const_cast<vq::Discretizer&>(disc).fingerprint();
  cache.header.attack = cfg.attack;
  cache.header.global_seed = cfg.seed;
  cache.header.store_rejected = cfg.store_rejected ? 1 : 0;

  const size_t n = dataset.size();
  for (size_t start = 0; start < n; start += size_t(cfg.batch_size)) {
    const size_t end = std::min(n, start + size_t(cfg.batch_size));
    std::vector<const Tensor*> imgs;
    std::vector<int> labels;
    std::vector<uint64_t> ids;
    for (size_t i = start; i < end; ++i) {
      imgs.push_back(&dataset.examples[i].image);
      labels.push_back(dataset.examples[i].label);
      ids.push_back(dataset.examples[i].id);
    }
    auto recs = dad_generate(teacher, disc, model::stack_images(imgs), labels, ids, cfg.attack,
                             cfg.seed);
    for (auto& r : recs)
      if (r.accepted || cfg.store_rejected) cache.records.push_back(std::move(r));
  }

  std::sort(cache.records.begin(), cache.records.end(),
            [](const AdversarialRecord& a, const AdversarialRecord& b) {
              return a.sample_id < b.sample_id;
            });
  return cache;
}

static constexpr char kCacheMagic[8] = {'D', 'A', 'D', 'C', 'A', 'C', 'H', 'E'};

namespace {

void put_f32_array(std::vector<uint8_t>& out, const real* v, size_t n) {
  put_pod(out, uint32_t(n));
  for (size_t i = 0; i < n; ++i) put_pod(out, float(v[i]));
}

std::vector<real> get_f32_array(ByteReader& r) {
  const uint32_t n = r.pod<uint32_t>();
  std::vector<real> out(n);
  for (uint32_t i = 0; i < n; ++i) out[i] = real(r.pod<float>());
  return out;
}

}  // namespace

std::vector<uint8_t> serialize_cache(const CacheFile& cache) {
  std::vector<uint8_t> out;
  put_bytes(out, kCacheMagic, 8);
  put_pod(out, cache.header.version);
  for (int l = 0; l < 4; ++l) put_pod(out, cache.header.teacher_fp.lane[l]);
  for (int l = 0; l < 4; ++l) put_pod(out, cache.header.discretizer_fp.lane[l]);
  put_pod(out, double(cache.header.attack.epsilon));
  put_pod(out, uint32_t(cache.header.attack.steps));
  put_pod(out, double(cache.header.attack.step_size));
  put_pod(out, uint8_t(cache.header.attack.norm == Norm::Linf ? 0 : 1));
  put_pod(out, cache.header.global_seed);
  put_pod(out, cache.header.store_rejected);
  put_pod(out, uint64_t(cache.records.size()));
  for (const auto& r : cache.records) {
    put_pod(out, r.sample_id);
    put_pod(out, uint8_t(r.accepted ? 1 : 0));
    put_pod(out, r.label);
    put_pod(out, r.gen_seed);
    put_pod(out, uint8_t(r.image.ndim()));
    for (int i = 0; i < r.image.ndim(); ++i) put_pod(out, uint32_t(r.image.dim(i)));
    put_pod(out, uint32_t(r.image.numel()));
    for (int64_t i = 0; i < r.image.numel(); ++i) put_pod(out, float(r.image.v[size_t(i)]));
    put_f32_array(out, r.teacher_logits_aug.data(), r.teacher_logits_aug.size());
    put_f32_array(out, r.teacher_logits_clean.data(), r.teacher_logits_clean.size());
  }
  return out;
}

CacheFile deserialize_cache(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[8];
  r.read(magic, 8);
  check(std::memcmp(magic, kCacheMagic, 8) == 0, "not a cache file (bad magic)");
  CacheFile cache;
  cache.header.version = r.pod<uint16_t>();
  check(cache.header.version == 1, "unsupported cache version");
  for (int l = 0; l < 4; ++l) cache.header.teacher_fp.lane[l] = r.pod<uint64_t>();
  for (int l = 0; l < 4; ++l) cache.header.discretizer_fp.lane[l] = r.pod<uint64_t>();
  cache.header.attack.epsilon = r.pod<double>();
  cache.header.attack.steps = int(r.pod<uint32_t>());
  cache.header.attack.step_size = r.pod<double>();
  cache.header.attack.norm = r.pod<uint8_t>() == 0 ? Norm::Linf : Norm::L2;
  cache.header.global_seed = r.pod<uint64_t>();
  cache.header.store_rejected = r.pod<uint8_t>();
  const uint64_t count = r.pod<uint64_t>();
  cache.records.resize(count);
  for (auto& rec : cache.records) {
    rec.sample_id = r.pod<uint64_t>();
    rec.accepted = r.pod<uint8_t>() != 0;
    rec.label = r.pod<uint16_t>();
    rec.gen_seed = r.pod<uint64_t>();
    const uint8_t ndim = r.pod<uint8_t>();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = int(r.pod<uint32_t>());
    const uint32_t numel = r.pod<uint32_t>();
    rec.image = Tensor(shape);
    check(rec.image.numel() == int64_t(numel), "cache record image size mismatch");
    for (uint32_t i = 0; i < numel; ++i) rec.image.v[i] = real(r.pod<float>());
    rec.teacher_logits_aug = get_f32_array(r);
    rec.teacher_logits_clean = get_f32_array(r);
  }
  return cache;
}

void write_cache(const CacheFile& cache, const std::string& path) {
  write_file_bytes(path, serialize_cache(cache));
}

CacheFile read_cache(const std::string& path) { return deserialize_cache(read_file_bytes(path)); }

ReverifyResult reverify_cache(const CacheFile& cache, model::Classifier& teacher) {
  ReverifyResult res;
  const size_t batch = 64;
  for (size_t start = 0; start < cache.records.size(); start += batch) {
    const size_t end = std::min(cache.records.size(), start + batch);
    std::vector<const Tensor*> imgs;
    for (size_t i = start; i < end; ++i) imgs.push_back(&cache.records[i].image);
    const std::vector<int> preds = teacher.predict(model::stack_images(imgs));
    for (size_t i = start; i < end; ++i) {
      const bool ok = preds[i - start] == int(cache.records[i].label);
      ++res.checked;
      if (ok != cache.records[i].accepted) ++res.mismatched;
    }
  }
  return res;
}

}  // namespace dad::adversary
