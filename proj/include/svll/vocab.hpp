#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace svll {

/// Token-string <-> integer-id bijection with reserved control tokens at
/// fixed ids. Serialized as UTF-8 lines "token<TAB>id", ordered by id.
class Vocabulary {
   public:
    static constexpr int kSos = 0;
    static constexpr int kEos = 1;
    static constexpr int kMask = 2;

    Vocabulary() {
        add("<sos>");
        add("<eos>");
        add("<mask>");
    }

    /// Insert a token (no-op if present); returns its id.
    int add(const std::string& tok);

    int id_of(const std::string& tok) const;
    const std::string& token_of(int id) const;
    bool contains(const std::string& tok) const { return ids_.count(tok) != 0; }
    std::size_t size() const { return tokens_.size(); }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

   private:
    std::vector<std::string> tokens_;  // id -> token
    std::unordered_map<std::string, int> ids_;
};

}  // namespace svll
