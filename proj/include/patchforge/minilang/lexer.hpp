#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace patchforge::minilang {

enum class TokenKind {
  keyword,
  identifier,
  int_literal,
  string_literal,
  op,
  punct,
  unknown,  // only produced by lex_lenient
  eof,
};

struct Token {
  TokenKind kind = TokenKind::eof;
  std::string text;
  std::size_t offset = 0;

  bool operator==(const Token&) const = default;
};

inline constexpr std::array<std::string_view, 6> kKeywords = {
    "fn", "let", "if", "else", "while", "return"};

// Callable names the rule engine and the corpus generator give meaning to.
// Syntactically they are ordinary identifiers.
inline constexpr std::array<std::string_view, 10> kBuiltins = {
    "eval", "system", "exec",  "read_input", "escape",
    "limit", "filter", "alloc", "len",        "print"};

inline constexpr std::array<std::string_view, 15> kOperators = {
    "+", "-", "*", "/", "%", "<", "<=", ">", ">=", "==", "!=", "&&", "||", "!", "="};

inline constexpr std::array<std::string_view, 8> kPunctuation = {
    "(", ")", "{", "}", "[", "]", ",", ";"};

inline bool is_keyword(std::string_view s) {
  return std::find(kKeywords.begin(), kKeywords.end(), s) != kKeywords.end();
}

inline bool is_builtin(std::string_view s) {
  return std::find(kBuiltins.begin(), kBuiltins.end(), s) != kBuiltins.end();
}

class LexError : public std::runtime_error {
 public:
  LexError(std::size_t offset, const std::string& reason)
      : std::runtime_error("lex error at offset " + std::to_string(offset) + ": " + reason),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

namespace detail {

inline bool ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
inline bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
inline bool digit(char c) { return c >= '0' && c <= '9'; }

inline std::vector<Token> lex_impl(std::string_view src, bool lenient) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = src.size();
  auto fail = [&](std::size_t at, const std::string& why) {
    if (!lenient) throw LexError(at, why);
  };
  while (i < n) {
    char c = src[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && src[i + 1] == '/') {
      while (i < n && src[i] != '\n') ++i;
      continue;
    }
    const std::size_t start = i;
    if (ident_start(c)) {
      while (i < n && ident_char(src[i])) ++i;
      std::string text(src.substr(start, i - start));
      TokenKind kind = is_keyword(text) ? TokenKind::keyword : TokenKind::identifier;
      out.push_back({kind, std::move(text), start});
      continue;
    }
    if (digit(c)) {
      while (i < n && digit(src[i])) ++i;
      out.push_back({TokenKind::int_literal, std::string(src.substr(start, i - start)), start});
      continue;
    }
    if (c == '"') {
      ++i;
      bool closed = false;
      while (i < n) {
        if (src[i] == '\\' && i + 1 < n && src[i + 1] != '\n') {
          i += 2;
          continue;
        }
        if (src[i] == '\n') break;
        if (src[i] == '"') {
          ++i;
          closed = true;
          break;
        }
        ++i;
      }
      if (!closed) {
        fail(start, "unterminated string literal");
        // lenient: the opening quote becomes an unknown lexeme, rescan after it
        out.push_back({TokenKind::unknown, "\"", start});
        i = start + 1;
        continue;
      }
      out.push_back({TokenKind::string_literal, std::string(src.substr(start, i - start)), start});
      continue;
    }
    if (i + 1 < n) {
      std::string_view two = src.substr(i, 2);
      if (two == "<=" || two == ">=" || two == "==" || two == "!=" || two == "&&" || two == "||") {
        out.push_back({TokenKind::op, std::string(two), start});
        i += 2;
        continue;
      }
    }
    std::string_view one = src.substr(i, 1);
    if (std::find(kOperators.begin(), kOperators.end(), one) != kOperators.end()) {
      out.push_back({TokenKind::op, std::string(one), start});
      ++i;
      continue;
    }
    if (std::find(kPunctuation.begin(), kPunctuation.end(), one) != kPunctuation.end()) {
      out.push_back({TokenKind::punct, std::string(one), start});
      ++i;
      continue;
    }
    fail(start, std::string("illegal character '") + c + "'");
    out.push_back({TokenKind::unknown, std::string(one), start});
    ++i;
  }
  out.push_back({TokenKind::eof, "", n});
  return out;
}

}  // namespace detail

/// Tokenizes MiniLang source. `//` comments and whitespace are skipped; the
/// stream always ends with an eof token. Throws LexError on the first
/// character that cannot start a token.
inline std::vector<Token> lex(std::string_view source) { return detail::lex_impl(source, false); }

/// Like lex(), but never throws: illegal characters become `unknown` tokens.
inline std::vector<Token> lex_lenient(std::string_view source) {
  return detail::lex_impl(source, true);
}

/// True when two streams agree on kind and text, ignoring offsets.
inline bool same_lexemes(const std::vector<Token>& a, const std::vector<Token>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](const Token& x, const Token& y) {
    return x.kind == y.kind && x.text == y.text;
  });
}

}  // namespace patchforge::minilang
