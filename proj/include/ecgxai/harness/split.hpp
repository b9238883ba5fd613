#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/core/random.hpp"
#include "ecgxai/signal/types.hpp"

namespace ecgxai::harness {

using signal::RrrSegment;

struct SplitRatios {
  double train = 0.70, val = 0.15, test = 0.15;
};

struct PatientSplit {
  std::vector<std::string> train, val, test;
};

struct DatasetSplit {
  std::vector<RrrSegment> train, val, test;
  PatientSplit patients;
  std::uint64_t seed = 0;
  SplitRatios ratios;
};

/// Patient-level shuffle split. Validation and test each receive a rounded
/// share of the patients; training takes the remainder.
inline PatientSplit split_patients(std::vector<std::string> patients, const SplitRatios& ratios, std::uint64_t seed) {
  require(ratios.train > 0 && ratios.val > 0 && ratios.test > 0 &&
              std::abs(ratios.train + ratios.val + ratios.test - 1.0) < 1e-9,
          "group_shuffle_split: ratios must be positive and sum to 1");
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  const std::size_t n = patients.size();
  const auto n_val = static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(ratios.test * static_cast<double>(n)));
  require(n_val >= 1 && n_test >= 1 && n_val + n_test < n,
          "group_shuffle_split: " + std::to_string(n) + " patients are too few for a three-way split");
  Rng rng(seed);
  rng.shuffle(patients);
  PatientSplit out;
  out.val.assign(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.test.assign(patients.begin() + static_cast<std::ptrdiff_t>(n_val),
                  patients.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  out.train.assign(patients.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), patients.end());
  return out;
}

/// Splits segments so that no patient contributes to more than one part.
inline DatasetSplit group_shuffle_split(std::span<const RrrSegment> segments, const SplitRatios& ratios,
                                        std::uint64_t seed) {
  std::map<std::string, signal::Label> label_of;
  for (const auto& s : segments) {
    auto [it, inserted] = label_of.emplace(s.patient_id, s.label);
    if (!inserted && it->second != s.label)
      throw InvalidInputError("group_shuffle_split: patient " + s.patient_id + " carries more than one label");
  }
  std::map<signal::Label, std::size_t> per_class;
  for (const auto& [_, l] : label_of) ++per_class[l];
  for (signal::Label l : signal::kAllLabels)
    require(per_class[l] >= 3, "group_shuffle_split: class " + std::string(signal::label_name(l)) + " has " +
                                   std::to_string(per_class[l]) + " patients, at least 3 required");

  std::vector<std::string> ids;
  ids.reserve(label_of.size());
  for (const auto& [id, _] : label_of) ids.push_back(id);
  DatasetSplit out;
  out.seed = seed;
  out.ratios = ratios;
  out.patients = split_patients(std::move(ids), ratios, seed);
  const std::set<std::string> val(out.patients.val.begin(), out.patients.val.end());
  const std::set<std::string> test(out.patients.test.begin(), out.patients.test.end());
  for (const auto& s : segments) {
    if (val.contains(s.patient_id))
      out.val.push_back(s);
    else if (test.contains(s.patient_id))
      out.test.push_back(s);
    else
      out.train.push_back(s);
  }
  return out;
}

}  // namespace ecgxai::harness
