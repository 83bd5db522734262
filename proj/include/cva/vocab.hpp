#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cva {

/// Out-of-range token id; `position()` is the offending index in the sequence.
class VocabularyError : public std::out_of_range {
 public:
  VocabularyError(const std::string& what, std::size_t position)
      : std::out_of_range(what), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Token <-> id map. Line number in the on-disk file is the id.
class Vocabulary {
 public:
  static constexpr const char* kUnknown = "<unk>";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  /// Id of `token`, or 0 (the unknown entry) when absent.
  std::size_t id(const std::string& token) const;
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;

  void write(std::ostream& os) const;
  static Vocabulary read(std::istream& is);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> ids_;
};

std::vector<std::string> split_whitespace(const std::string& s);

}  // namespace cva
