#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medalign/errors.hpp"

namespace medalign {

/// The fourteen finding types. The numeric order is part of the on-disk
/// label format (index 0 = NoFinding ... index 13 = SupportDevices) and must
/// not change.
enum class FindingType : std::size_t {
  NoFinding = 0,
  EnlargedCardiomediastinum,
  Cardiomegaly,
  LungOpacity,
  LungLesion,
  Edema,
  Consolidation,
  Pneumonia,
  Atelectasis,
  Pneumothorax,
  PleuralEffusion,
  PleuralOther,
  Fracture,
  SupportDevices,
};

inline constexpr std::size_t kNumFindings = 14;

inline constexpr std::array<std::string_view, kNumFindings> kFindingNames = {
    "No Finding",      "Enlarged Cardiomediastinum",
    "Cardiomegaly",    "Lung Opacity",
    "Lung Lesion",     "Edema",
    "Consolidation",   "Pneumonia",
    "Atelectasis",     "Pneumothorax",
    "Pleural Effusion", "Pleural Other",
    "Fracture",        "Support Devices",
};

constexpr std::size_t index_of(FindingType f) noexcept { return static_cast<std::size_t>(f); }

constexpr FindingType finding_at(std::size_t i) {
  if (i >= kNumFindings) throw RangeError("finding index out of range: " + std::to_string(i));
  return static_cast<FindingType>(i);
}

constexpr std::string_view name_of(FindingType f) noexcept { return kFindingNames[index_of(f)]; }

inline std::optional<FindingType> finding_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumFindings; ++i)
    if (kFindingNames[i] == name) return static_cast<FindingType>(i);
  return std::nullopt;
}

/// Multi-hot vector over the fourteen finding types.
///
/// Invariant: when the NoFinding bit is set no other bit is set. `set()`
/// maintains this by letting any real finding override NoFinding, while
/// `from_bits()` validates external input and rejects violations.
/// An all-zero label is "unlabeled" and is never paired.
class FindingLabel {
public:
  FindingLabel() = default;

  static FindingLabel of(std::initializer_list<FindingType> findings) {
    FindingLabel l;
    for (auto f : findings) l.set(f);
    return l;
  }

  static FindingLabel from_bits(std::span<const int> bits) {
    if (bits.size() != kNumFindings)
      throw FormatError("label must have " + std::to_string(kNumFindings) + " entries, got " +
                        std::to_string(bits.size()));
    FindingLabel l;
    for (std::size_t i = 0; i < kNumFindings; ++i) {
      if (bits[i] != 0 && bits[i] != 1) throw FormatError("label entries must be 0 or 1");
      l.bits_[i] = bits[i] == 1;
    }
    if (l.bits_[0] && l.bits_.count() > 1)
      throw FormatError("label sets No Finding together with other findings");
    return l;
  }

  void set(FindingType f) {
    if (f == FindingType::NoFinding) {
      if (bits_.none()) bits_.set(0);
      return;
    }
    bits_.reset(0);
    bits_.set(index_of(f));
  }

  bool test(FindingType f) const noexcept { return bits_.test(index_of(f)); }
  bool unlabeled() const noexcept { return bits_.none(); }
  std::size_t count() const noexcept { return bits_.count(); }

  std::array<int, kNumFindings> to_array() const {
    std::array<int, kNumFindings> out{};
    for (std::size_t i = 0; i < kNumFindings; ++i) out[i] = bits_.test(i) ? 1 : 0;
    return out;
  }

  std::vector<FindingType> findings() const {
    std::vector<FindingType> out;
    for (std::size_t i = 0; i < kNumFindings; ++i)
      if (bits_.test(i)) out.push_back(static_cast<FindingType>(i));
    return out;
  }

  std::size_t overlap(const FindingLabel& other) const noexcept { return (bits_ & other.bits_).count(); }

  unsigned long to_ulong() const noexcept { return bits_.to_ulong(); }

  std::string to_string() const {
    std::string s;
    for (auto f : findings()) {
      if (!s.empty()) s += '|';
      s += name_of(f);
    }
    return s.empty() ? "<unlabeled>" : s;
  }

  friend bool operator==(const FindingLabel&, const FindingLabel&) = default;

private:
  std::bitset<kNumFindings> bits_;
};

}  // namespace medalign
