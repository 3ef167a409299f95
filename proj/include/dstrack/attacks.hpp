#pragma once

/**
 * @file
 * @brief Attacks on the influence factors. Each attack is a one-shot transform of the
 * factor vector; dynamics, costs and references are left untouched.
 */

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"

namespace dstrack {

enum class AttackKind { DenialOfService, LeaderAttack, ProtectedMechanism, IsolatedMechanism };

inline const char * to_string(AttackKind k)
{
  switch (k) {
    case AttackKind::DenialOfService: return "denial_of_service";
    case AttackKind::LeaderAttack: return "leader";
    case AttackKind::ProtectedMechanism: return "protected";
    case AttackKind::IsolatedMechanism: return "isolated";
  }
  return "?";
}

inline std::optional<AttackKind> attack_kind_from_string(const std::string & s)
{
  for (auto k : {AttackKind::DenialOfService, AttackKind::LeaderAttack, AttackKind::ProtectedMechanism,
                 AttackKind::IsolatedMechanism}) {
    if (s == to_string(k)) { return k; }
  }
  return std::nullopt;
}

/// Attack configuration.
///
/// The meaning of z depends on the kind: for denial of service z_i = 0 marks an attacked agent
/// (the factor is multiplied by z_i); for the protected and isolated mechanisms z_i = 1 marks it.
/// The leader attack ignores z.
struct AttackSpec
{
  AttackKind kind = AttackKind::DenialOfService;
  std::vector<double> z;
  double rho = 0.5;
  double epsilon_isolate = 1e-3;

  bool operator==(const AttackSpec &) const = default;
};

namespace detail {

inline void check_binary(const std::vector<double> & z, std::size_t n)
{
  if (z.size() != n) {
    throw InputError("attack vector has " + std::to_string(z.size()) + " entries, population has " + std::to_string(n));
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] != 0.0 && z[i] != 1.0) { throw InputError("attack status z_" + std::to_string(i + 1) + " must be 0 or 1"); }
  }
}

}  // namespace detail

/// α̃_i = α_i z_i
inline Population apply_denial_of_service(const Population & pop, const std::vector<double> & z)
{
  detail::check_binary(z, pop.size());
  auto alphas = pop.alphas();
  for (std::size_t i = 0; i < alphas.size(); ++i) { alphas[i] *= z[i]; }
  return pop.with_alphas(alphas);
}

struct LeaderAttackResult
{
  Population population;
  std::size_t attacked = 0;  ///< 0-based index of the zeroed agent
};

/// Zeroes the agent with the largest factor. Ties go to the lowest index.
inline LeaderAttackResult apply_leader_attack(const Population & pop)
{
  const auto alphas = pop.alphas();
  std::size_t lead = 0;
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    if (alphas[i] > alphas[lead]) { lead = i; }
  }
  std::vector<double> z(alphas.size(), 1.0);
  z[lead] = 0.0;
  return {apply_denial_of_service(pop, z), lead};
}

/// α̃_i = nρz_i + (n/(n−1))(1−ρ)(1−z_i) for a single attacked agent (z_i = 1). The new factors
/// average to one, so ρ moves the center of mass between the attacked agent and the rest.
inline Population apply_protected_mechanism(const Population & pop, const std::vector<double> & z, double rho)
{
  detail::check_binary(z, pop.size());
  if (!(rho >= 0.0 && rho <= 1.0)) { throw InputError("protection level rho must lie in [0, 1]"); }
  const std::size_t n = pop.size();
  if (n < 2) { throw InputError("protected mechanism needs at least two agents"); }
  std::size_t attacked = 0;
  for (double zi : z) { attacked += zi == 1.0 ? 1 : 0; }
  if (attacked != 1) {
    throw InputError("protected mechanism needs exactly one attacked agent, got " + std::to_string(attacked));
  }
  const double nn = static_cast<double>(n);
  std::vector<double> alphas(n);
  for (std::size_t i = 0; i < n; ++i) {
    alphas[i] = nn * rho * z[i] + nn / (nn - 1.0) * (1.0 - rho) * (1.0 - z[i]);
  }
  return pop.with_alphas(alphas);
}

/// Attacked agents (z_i = 1) get factor ε; others keep theirs. No renormalization.
inline Population apply_isolated_mechanism(const Population & pop, const std::vector<double> & z,
                                           double epsilon_isolate)
{
  detail::check_binary(z, pop.size());
  if (!(epsilon_isolate > 0.0) || !std::isfinite(epsilon_isolate)) {
    throw InputError("isolation factor must be positive");
  }
  auto alphas = pop.alphas();
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (z[i] == 1.0) { alphas[i] = epsilon_isolate; }
  }
  return pop.with_alphas(alphas);
}

inline Population apply_attack(const Population & pop, const AttackSpec & spec)
{
  switch (spec.kind) {
    case AttackKind::DenialOfService: return apply_denial_of_service(pop, spec.z);
    case AttackKind::LeaderAttack: return apply_leader_attack(pop).population;
    case AttackKind::ProtectedMechanism: return apply_protected_mechanism(pop, spec.z, spec.rho);
    case AttackKind::IsolatedMechanism: return apply_isolated_mechanism(pop, spec.z, spec.epsilon_isolate);
  }
  return pop;
}

}  // namespace dstrack
