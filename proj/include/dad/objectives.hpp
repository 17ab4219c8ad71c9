#pragma once

#include "dad/tape.hpp"

namespace dad::objectives {

enum class Objective { CE, KD, DAD, AT, DAT, ARD, RSLAD, DAT_DAD };

Objective objective_from_name(const std::string& name);
std::string objective_name(Objective o);

struct DistillConfig {
  real temperature = 4.0;
  real weight = 0.5;  // the distillation weight a
  Objective objective = Objective::CE;
  // when false, the clean-pair KL term of the augmented objectives is
  // unweighted; default weights both KL terms by a
  bool weight_first_kl = true;

  void validate() const {
    check(temperature > 0, "temperature must be positive");
    check(weight >= 0 && weight <= 1, "distillation weight must be in [0,1]");
  }
};

// ---- tape-level terms; student logits differentiable, teacher logits constant ----

Var cross_entropy(Tape& t, Var student_logits, const std::vector<int>& labels);
Var kl_temp(Tape& t, Var student_logits, Tensor teacher_logits, real temperature);

Var kd_loss(Tape& t, Var s_clean, Tensor t_clean, const std::vector<int>& labels,
            const DistillConfig& cfg);
Var dad_loss(Tape& t, Var s_clean, Tensor t_clean, Var s_aug, Tensor t_aug,
             const std::vector<int>& labels, const DistillConfig& cfg);
Var at_loss(Tape& t, Var s_clean, Var s_adv, const std::vector<int>& labels);
Var dat_loss(Tape& t, Var s_clean, Var s_disc_adv, const std::vector<int>& labels);
Var ard_loss(Tape& t, Var s_aug, Tensor t_clean, Var s_clean, const std::vector<int>& labels,
             const DistillConfig& cfg);
Var rslad_loss(Tape& t, Var s_clean, Var s_aug, Tensor t_clean, const DistillConfig& cfg);
Var dat_dad_loss(Tape& t, Var s_clean, Tensor t_clean, Var s_aug, Tensor t_aug, Var s_student_adv,
                 const std::vector<int>& labels, const DistillConfig& cfg);

// ---- value-level wrappers (same computation on a throwaway tape) ----

real cross_entropy(const Tensor& logits, const std::vector<int>& labels);
real kl_temp(const Tensor& student_logits, const Tensor& teacher_logits, real temperature);
real kd_loss(const Tensor& s_clean, const Tensor& t_clean, const std::vector<int>& labels,
             const DistillConfig& cfg);
real dad_loss(const Tensor& s_clean, const Tensor& t_clean, const Tensor& s_aug,
              const Tensor& t_aug, const std::vector<int>& labels, const DistillConfig& cfg);
real at_loss(const Tensor& s_clean, const Tensor& s_adv, const std::vector<int>& labels);
real dat_loss(const Tensor& s_clean, const Tensor& s_disc_adv, const std::vector<int>& labels);
real ard_loss(const Tensor& s_aug, const Tensor& t_clean, const Tensor& s_clean,
              const std::vector<int>& labels, const DistillConfig& cfg);
real rslad_loss(const Tensor& s_clean, const Tensor& s_aug, const Tensor& t_clean,
                const DistillConfig& cfg);
real dat_dad_loss(const Tensor& s_clean, const Tensor& t_clean, const Tensor& s_aug,
                  const Tensor& t_aug, const Tensor& s_student_adv,
                  const std::vector<int>& labels, const DistillConfig& cfg);

}  // namespace dad::objectives
