#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "patchforge/minilang/lexer.hpp"

namespace patchforge::minilang {

/// Dense symbol table for the agent. Layout: specials (PAD = 0, BOS, SEP,
/// EOS, UNK), keywords, builtin callables, operators, punctuation, the
/// identifier slots ID_0..ID_31, digits 0-9, and the string atom STR.
class TokenVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kSep = 2;
  static constexpr int kEos = 3;
  static constexpr int kUnk = 4;
  static constexpr int kIdentifierSlots = 32;

  static const TokenVocab& minilang() {
    static const TokenVocab vocab = build();
    return vocab;
  }

  std::size_t size() const { return symbols_.size(); }

  int id(std::string_view symbol) const {
    auto it = ids_.find(std::string(symbol));
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view symbol) const { return ids_.count(std::string(symbol)) != 0; }

  const std::string& symbol(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
      throw std::out_of_range("token id out of range: " + std::to_string(id));
    return symbols_[static_cast<std::size_t>(id)];
  }

  int slot_id(int slot) const { return first_slot_ + slot; }
  /// Identifier slot index for `id`, or -1.
  int slot_of(int id) const {
    return id >= first_slot_ && id < first_slot_ + kIdentifierSlots ? id - first_slot_ : -1;
  }
  int digit_id(int d) const { return first_digit_ + d; }
  int digit_of(int id) const { return id >= first_digit_ && id < first_digit_ + 10 ? id - first_digit_ : -1; }
  int string_atom() const { return string_atom_; }

  std::vector<int> encode(const std::vector<std::string>& symbols) const {
    std::vector<int> out;
    out.reserve(symbols.size());
    for (const auto& s : symbols) out.push_back(id(s));
    return out;
  }
  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(symbol(i));
    return out;
  }

 private:
  static TokenVocab build() {
    TokenVocab v;
    for (const char* s : {"<PAD>", "<BOS>", "<SEP>", "<EOS>", "<UNK>"}) v.push(s);
    for (auto s : kKeywords) v.push(std::string(s));
    for (auto s : kBuiltins) v.push(std::string(s));
    for (auto s : kOperators) v.push(std::string(s));
    for (auto s : kPunctuation) v.push(std::string(s));
    v.first_slot_ = static_cast<int>(v.symbols_.size());
    for (int i = 0; i < kIdentifierSlots; ++i) v.push("ID_" + std::to_string(i));
    v.first_digit_ = static_cast<int>(v.symbols_.size());
    for (int d = 0; d < 10; ++d) v.push(std::to_string(d));
    v.string_atom_ = static_cast<int>(v.symbols_.size());
    v.push("<STR>");
    return v;
  }

  void push(std::string s) {
    ids_.emplace(s, static_cast<int>(symbols_.size()));
    symbols_.push_back(std::move(s));
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
  int first_slot_ = 0;
  int first_digit_ = 0;
  int string_atom_ = 0;
};

/// First-occurrence identifier renaming shared between a prompt and its patch.
/// Builtin callables keep their own vocabulary entries and are never renamed.
struct Renaming {
  std::vector<std::string> names;        // slot -> original name
  std::map<std::string, int> slots;      // original name -> slot
  std::vector<std::string> strings;      // string literals in order of appearance

  /// Slot for `name`, allocating one if room remains; -1 past the cap.
  int slot_for(const std::string& name) {
    auto it = slots.find(name);
    if (it != slots.end()) return it->second;
    if (names.size() >= static_cast<std::size_t>(TokenVocab::kIdentifierSlots)) return -1;
    int slot = static_cast<int>(names.size());
    names.push_back(name);
    slots.emplace(name, slot);
    return slot;
  }
};

/// Maps source to vocabulary ids without BOS/EOS, continuing `renaming`.
/// Works on unparseable text: unknown lexemes become UNK.
inline std::vector<int> encode_source(std::string_view source, const TokenVocab& vocab,
                                      Renaming& renaming) {
  std::vector<int> out;
  for (const Token& t : lex_lenient(source)) {
    switch (t.kind) {
      case TokenKind::eof:
        break;
      case TokenKind::keyword:
      case TokenKind::op:
      case TokenKind::punct:
        out.push_back(vocab.id(t.text));
        break;
      case TokenKind::identifier:
        if (is_builtin(t.text)) {
          out.push_back(vocab.id(t.text));
        } else {
          int slot = renaming.slot_for(t.text);
          out.push_back(slot < 0 ? TokenVocab::kUnk : vocab.slot_id(slot));
        }
        break;
      case TokenKind::int_literal:
        for (char c : t.text) out.push_back(vocab.digit_id(c - '0'));
        break;
      case TokenKind::string_literal:
        renaming.strings.push_back(t.text);
        out.push_back(vocab.string_atom());
        break;
      case TokenKind::unknown:
        out.push_back(TokenVocab::kUnk);
        break;
    }
  }
  return out;
}

/// Agent-facing tokenization of a single program: BOS ... EOS, identifiers
/// alpha-renamed to ID_k by first occurrence, integers digit by digit.
inline std::vector<int> tokenize_for_agent(std::string_view source,
                                           const TokenVocab& vocab = TokenVocab::minilang()) {
  Renaming renaming;
  std::vector<int> out{TokenVocab::kBos};
  auto body = encode_source(source, vocab, renaming);
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(TokenVocab::kEos);
  return out;
}

/// Turns agent ids back into MiniLang text using the prompt's renaming.
/// Stops at EOS; BOS/PAD/SEP are skipped. Slots the prompt never bound
/// become `id<k>`; the i-th string atom reuses the prompt's i-th literal.
inline std::string decode_to_source(const std::vector<int>& ids, const Renaming& renaming,
                                    const TokenVocab& vocab = TokenVocab::minilang()) {
  std::string out;
  bool prev_digit = false;
  std::size_t string_index = 0;
  auto emit = [&](const std::string& s) {
    if (!out.empty()) out += ' ';
    out += s;
  };
  for (int id : ids) {
    if (id == TokenVocab::kEos) break;
    if (id == TokenVocab::kBos || id == TokenVocab::kPad || id == TokenVocab::kSep) {
      prev_digit = false;
      continue;
    }
    if (int d = vocab.digit_of(id); d >= 0) {
      if (prev_digit) {
        out += static_cast<char>('0' + d);
      } else {
        emit(std::string(1, static_cast<char>('0' + d)));
      }
      prev_digit = true;
      continue;
    }
    prev_digit = false;
    if (int slot = vocab.slot_of(id); slot >= 0) {
      emit(static_cast<std::size_t>(slot) < renaming.names.size()
               ? renaming.names[static_cast<std::size_t>(slot)]
               : "id" + std::to_string(slot));
    } else if (id == vocab.string_atom()) {
      if (renaming.strings.empty()) {
        emit("\"\"");
      } else {
        emit(renaming.strings[std::min(string_index, renaming.strings.size() - 1)]);
      }
      ++string_index;
    } else if (id == TokenVocab::kUnk) {
      emit("_unk");
    } else {
      emit(vocab.symbol(id));
    }
  }
  return out;
}

}  // namespace patchforge::minilang
