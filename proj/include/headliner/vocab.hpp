#pragma once

#include <map>
#include <string>
#include <vector>

#include "headliner/error.hpp"

namespace headliner {

// Closed token vocabulary. Ids 0..2 are reserved; remaining ids are assigned
// to sorted unique corpus tokens, so construction is order-independent.
class Vocabulary {
public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  Vocabulary() {
    add("<s>");
    add("</s>");
    add("<unk>");
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size())) {
      throw ContractError("vocabulary id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

}  // namespace headliner
