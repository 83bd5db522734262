#include "cva/vocab.hpp"

#include <fstream>
#include <sstream>

#include "cva/tensor.hpp"

namespace cva {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], i).second) throw std::invalid_argument("duplicate vocabulary entry '" + tokens_[i] + "'");
  }
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? 0 : it->second;
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

void Vocabulary::write(std::ostream& os) const {
  for (const auto& t : tokens_) os << t << '\n';
}

Vocabulary Vocabulary::read(std::istream& is) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write vocabulary file " + path);
  write(os);
  if (!os) throw std::runtime_error("write failed for " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read vocabulary file " + path);
  return read(is);
}

std::vector<std::string> split_whitespace(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace cva
