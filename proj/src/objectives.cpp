#include "dad/objectives.hpp"

namespace dad::objectives {

Objective objective_from_name(const std::string& name) {
  if (name == "ce" || name == "CE") return Objective::CE;
  if (name == "kd" || name == "KD") return Objective::KD;
  if (name == "dad" || name == "DAD") return Objective::DAD;
  if (name == "at" || name == "AT") return Objective::AT;
  if (name == "dat" || name == "DAT") return Objective::DAT;
  if (name == "ard" || name == "ARD") return Objective::ARD;
  if (name == "rslad" || name == "RSLAD") return Objective::RSLAD;
  if (name == "dat_dad" || name == "DAT_DAD" || name == "dat+dad") return Objective::DAT_DAD;
  fail("unknown objective: " + name);
}

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::CE: return "ce";
    case Objective::KD: return "kd";
    case Objective::DAD: return "dad";
    case Objective::AT: return "at";
    case Objective::DAT: return "dat";
    case Objective::ARD: return "ard";
    case Objective::RSLAD: return "rslad";
    case Objective::DAT_DAD: return "dat_dad";
  }
  fail("bad objective");
}

Var cross_entropy(Tape& t, Var student_logits, const std::vector<int>& labels) {
  return t.cross_entropy(student_logits, labels);
}

Var kl_temp(Tape& t, Var student_logits, Tensor teacher_logits, real temperature) {
  return t.kl_temp(student_logits, std::move(teacher_logits), temperature);
}

Var kd_loss(Tape& t, Var s_clean, Tensor t_clean, const std::vector<int>& labels,
            const DistillConfig& cfg) {
  cfg.validate();
  Var ce = t.cross_entropy(s_clean, labels);
  Var kl = t.kl_temp(s_clean, std::move(t_clean), cfg.temperature);
  return t.add(ce, t.scale(kl, cfg.weight));
}

Var dad_loss(Tape& t, Var s_clean, Tensor t_clean, Var s_aug, Tensor t_aug,
             const std::vector<int>& labels, const DistillConfig& cfg) {
  cfg.validate();
  const real w_clean = cfg.weight_first_kl ? cfg.weight : 1.0;
  Var ce = t.cross_entropy(s_clean, labels);
  Var kl_clean = t.kl_temp(s_clean, std::move(t_clean), cfg.temperature);
  Var kl_aug = t.kl_temp(s_aug, std::move(t_aug), cfg.temperature);
  return t.add(ce, t.add(t.scale(kl_clean, w_clean), t.scale(kl_aug, cfg.weight)));
}

Var at_loss(Tape& t, Var s_clean, Var s_adv, const std::vector<int>& labels) {
  return t.add(t.cross_entropy(s_clean, labels), t.cross_entropy(s_adv, labels));
}

Var dat_loss(Tape& t, Var s_clean, Var s_disc_adv, const std::vector<int>& labels) {
  return t.add(t.cross_entropy(s_clean, labels), t.cross_entropy(s_disc_adv, labels));
}

Var ard_loss(Tape& t, Var s_aug, Tensor t_clean, Var s_clean, const std::vector<int>& labels,
             const DistillConfig& cfg) {
  cfg.validate();
  Var ce = t.cross_entropy(s_clean, labels);
  Var kl = t.kl_temp(s_aug, std::move(t_clean), cfg.temperature);
  return t.add(ce, t.scale(kl, cfg.weight));
}

Var rslad_loss(Tape& t, Var s_clean, Var s_aug, Tensor t_clean, const DistillConfig& cfg) {
  cfg.validate();
  Var kl_clean = t.kl_temp(s_clean, t_clean, cfg.temperature);
  Var kl_aug = t.kl_temp(s_aug, std::move(t_clean), cfg.temperature);
  return t.add(kl_clean, t.scale(kl_aug, cfg.weight));
}

Var dat_dad_loss(Tape& t, Var s_clean, Tensor t_clean, Var s_aug, Tensor t_aug, Var s_student_adv,
                 const std::vector<int>& labels, const DistillConfig& cfg) {
  cfg.validate();
  Var base = dad_loss(t, s_clean, std::move(t_clean), s_aug, std::move(t_aug), labels, cfg);
  Var ce_adv = t.cross_entropy(s_student_adv, labels);
  return t.add(base, t.scale(ce_adv, cfg.weight));
}

namespace {

template <class Fn>
real eval_scalar(Fn&& fn) {
  Tape t;
  Var out = fn(t);
  return t.val(out).v[0];
}

}  // namespace

real cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  return eval_scalar([&](Tape& t) { return t.cross_entropy(t.leaf(logits), labels); });
}

real kl_temp(const Tensor& student_logits, const Tensor& teacher_logits, real temperature) {
  return eval_scalar(
      [&](Tape& t) { return t.kl_temp(t.leaf(student_logits), teacher_logits, temperature); });
}

real kd_loss(const Tensor& s_clean, const Tensor& t_clean, const std::vector<int>& labels,
             const DistillConfig& cfg) {
  return eval_scalar([&](Tape& t) { return kd_loss(t, t.leaf(s_clean), t_clean, labels, cfg); });
}

real dad_loss(const Tensor& s_clean, const Tensor& t_clean, const Tensor& s_aug,
              const Tensor& t_aug, const std::vector<int>& labels, const DistillConfig& cfg) {
  return eval_scalar([&](Tape& t) {
    return dad_loss(t, t.leaf(s_clean), t_clean, t.leaf(s_aug), t_aug, labels, cfg);
  });
}

real at_loss(const Tensor& s_clean, const Tensor& s_adv, const std::vector<int>& labels) {
  return eval_scalar([&](Tape& t) { return at_loss(t, t.leaf(s_clean), t.leaf(s_adv), labels); });
}

real dat_loss(const Tensor& s_clean, const Tensor& s_disc_adv, const std::vector<int>& labels) {
  return eval_scalar(
      [&](Tape& t) { return dat_loss(t, t.leaf(s_clean), t.leaf(s_disc_adv), labels); });
}

real ard_loss(const Tensor& s_aug, const Tensor& t_clean, const Tensor& s_clean,
              const std::vector<int>& labels, const DistillConfig& cfg) {
  return eval_scalar([&](Tape& t) {
    return ard_loss(t, t.leaf(s_aug), t_clean, t.leaf(s_clean), labels, cfg);
  });
}

real rslad_loss(const Tensor& s_clean, const Tensor& s_aug, const Tensor& t_clean,
                const DistillConfig& cfg) {
  return eval_scalar(
      [&](Tape& t) { return rslad_loss(t, t.leaf(s_clean), t.leaf(s_aug), t_clean, cfg); });
}

real dat_dad_loss(const Tensor& s_clean, const Tensor& t_clean, const Tensor& s_aug,
                  const Tensor& t_aug, const Tensor& s_student_adv,
                  const std::vector<int>& labels, const DistillConfig& cfg) {
  return eval_scalar([&](Tape& t) {
    return dat_dad_loss(t, t.leaf(s_clean), t_clean, t.leaf(s_aug), t_aug,
                        t.leaf(s_student_adv), labels, cfg);
  });
}

}  // namespace dad::objectives
