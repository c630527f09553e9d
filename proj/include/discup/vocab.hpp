#pragma once

#include <string>
#include <vector>

#include "discup/error.hpp"

namespace discup {

// Binary attribute label. The workbench steers toward one of two classes.
struct AttributeLabel {
  int cls = 1;  // negative=0, positive=1

  std::string name() const { return cls == 1 ? "positive" : "negative"; }
  AttributeLabel opposite() const { return {1 - cls}; }

  static AttributeLabel parse(const std::string& s) {
    if (s == "positive") return {1};
    if (s == "negative") return {0};
    throw FormatError("unknown attribute label: " + s);
  }
};

// Fixed symbolic vocabulary. Ids 0/1 are reserved for BOS/PAD and live inside
// the neutral region of the partition; the remaining ids are grouped into
// positive, negative, neutral-content and domain-marker ranges.
//
//   0 <bos> | 1 <pad> | pos ... | neg ... | neutral content ... | domain ...
struct Vocab {
  static constexpr int kBos = 0;
  static constexpr int kPad = 1;

  int size = 0;
  int pos_base = 0, pos_count = 0;
  int neg_base = 0, neg_count = 0;
  int neutral_base = 0, neutral_count = 0;  // emittable neutral tokens
  int domain_base = 0, domain_count = 0;

  // partition sizes count BOS/PAD as part of the neutral share
  static Vocab make(int pos, int neg, int neutral, int domain) {
    if (neutral < 3) throw InvalidInputError("vocab: neutral share too small");
    Vocab v;
    v.size = pos + neg + neutral + domain;
    v.pos_base = 2;
    v.pos_count = pos;
    v.neg_base = v.pos_base + pos;
    v.neg_count = neg;
    v.neutral_base = v.neg_base + neg;
    v.neutral_count = neutral - 2;
    v.domain_base = v.neutral_base + v.neutral_count;
    v.domain_count = domain;
    return v;
  }

  static Vocab standard() { return make(16, 16, 24, 8); }

  bool is_domain(int id) const {
    return id >= domain_base && id < domain_base + domain_count;
  }

  int attribute_base(AttributeLabel a) const {
    return a.cls == 1 ? pos_base : neg_base;
  }
  int attribute_count(AttributeLabel a) const {
    return a.cls == 1 ? pos_count : neg_count;
  }

  std::string token_string(int id) const {
    if (id == kBos) return "<bos>";
    if (id == kPad) return "<pad>";
    if (is_domain(id)) return "d" + std::to_string(id - domain_base);
    if (id < 0 || id >= size)
      throw ContractViolation("vocab: id out of range");
    return (id < 10 ? "t0" : "t") + std::to_string(id);
  }

  int token_id(const std::string& s) const {
    if (s == "<bos>") return kBos;
    if (s == "<pad>") return kPad;
    if (s.size() >= 2 && s[0] == 'd') {
      int k = std::stoi(s.substr(1));
      if (k < 0 || k >= domain_count)
        throw FormatError("vocab: unknown token " + s);
      return domain_base + k;
    }
    if (s.size() >= 2 && s[0] == 't') {
      int id = std::stoi(s.substr(1));
      if (id < 2 || id >= domain_base)
        throw FormatError("vocab: unknown token " + s);
      return id;
    }
    throw FormatError("vocab: unknown token " + s);
  }
};

}  // namespace discup
