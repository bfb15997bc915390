#include "svll/vocab.hpp"

#include <fstream>
#include <stdexcept>

namespace svll {

int Vocabulary::add(const std::string& tok) {
    if (tok.empty() || tok.find('\t') != std::string::npos || tok.find('\n') != std::string::npos) {
        throw std::invalid_argument("vocab: token must be non-empty and free of tab/newline");
    }
    auto it = ids_.find(tok);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(tok);
    ids_.emplace(tok, id);
    return id;
}

int Vocabulary::id_of(const std::string& tok) const {
    auto it = ids_.find(tok);
    if (it == ids_.end()) throw std::out_of_range("vocab: unknown token '" + tok + "'");
    return it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw std::out_of_range("vocab: unknown id " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("vocab: cannot write " + path);
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
    if (!out) throw std::runtime_error("vocab: write failed for " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("vocab: cannot read " + path);
    Vocabulary v;
    v.tokens_.clear();
    v.ids_.clear();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("vocab: malformed line '" + line + "'");
        const std::string tok = line.substr(0, tab);
        const long id = std::stol(line.substr(tab + 1));
        if (id != static_cast<long>(v.tokens_.size())) throw std::runtime_error("vocab: ids not dense and ordered");
        if (v.ids_.count(tok)) throw std::runtime_error("vocab: duplicate token '" + tok + "'");
        v.tokens_.push_back(tok);
        v.ids_.emplace(tok, static_cast<int>(id));
    }
    if (v.size() < 3 || v.tokens_[kSos] != "<sos>" || v.tokens_[kEos] != "<eos>" || v.tokens_[kMask] != "<mask>") {
        throw std::runtime_error("vocab: reserved tokens missing in " + path);
    }
    return v;
}

}  // namespace svll
