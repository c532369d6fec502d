#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"

namespace cgbound {

/// Forward-mode dual number; nesting Dual<Dual<double>> gives second derivatives.
template <class T>
struct Dual {
  T v{}, d{};
  Dual() = default;
  Dual(double x) : v(x), d(0.0) {}
  Dual(T x, T dx) : v(x), d(dx) {}
};

template <class T> Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
template <class T> Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}

namespace ad {
inline double exp(double x) { return std::exp(x); }
inline double cos(double x) { return std::cos(x); }
inline double sin(double x) { return std::sin(x); }
inline double log(double x) { return std::log(x); }
template <class T> Dual<T> exp(const Dual<T>& a);
template <class T> Dual<T> cos(const Dual<T>& a);
template <class T> Dual<T> sin(const Dual<T>& a);
template <class T> Dual<T> log(const Dual<T>& a);
template <class T> Dual<T> exp(const Dual<T>& a) {
  T e = exp(a.v);
  return {e, a.d * e};
}
template <class T> Dual<T> cos(const Dual<T>& a) { return {cos(a.v), -(a.d * sin(a.v))}; }
template <class T> Dual<T> sin(const Dual<T>& a) { return {sin(a.v), a.d * cos(a.v)}; }
template <class T> Dual<T> log(const Dual<T>& a) { return {log(a.v), a.d / a.v}; }
}  // namespace ad

/// Parsed scalar expression over variables q1..qd.
/// Grammar: literals, q1..qd, + - * / ^, unary minus, parentheses, exp(.), cos(.).
class Expr {
public:
  Expr() = default;
  Expr(const std::string& text, int dim) : text_(text), dim_(dim) {
    pos_ = 0;
    root_ = parse_sum();
    skip();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
  }

  int dim() const { return dim_; }
  const std::string& text() const { return text_; }

  template <class T>
  T eval(const std::vector<T>& q) const { return eval_node<T>(root_.get(), q); }

  double value(const Vec& q) const {
    std::vector<double> x(q.data(), q.data() + q.size());
    return eval(x);
  }

  Vec gradient(const Vec& q) const {
    Vec g(dim_);
    std::vector<Dual<double>> x(dim_);
    for (int i = 0; i < dim_; ++i) {
      for (int j = 0; j < dim_; ++j) x[j] = Dual<double>(q(j), i == j ? 1.0 : 0.0);
      g(i) = eval(x).d;
    }
    return g;
  }

  Mat hessian(const Vec& q) const {
    using D2 = Dual<Dual<double>>;
    Mat h(dim_, dim_);
    std::vector<D2> x(dim_);
    for (int i = 0; i < dim_; ++i)
      for (int j = i; j < dim_; ++j) {
        for (int m = 0; m < dim_; ++m)
          x[m] = D2(Dual<double>(q(m), m == j ? 1.0 : 0.0), Dual<double>(m == i ? 1.0 : 0.0, 0.0));
        h(i, j) = h(j, i) = eval(x).d.d;
      }
    return h;
  }

private:
  enum class Op { num, var, neg, add, sub, mul, div, pow, exp, cos };
  struct Node {
    Op op;
    double num = 0.0;
    int var = 0;
    std::shared_ptr<Node> a, b;
  };
  using P = std::shared_ptr<Node>;

  template <class T>
  static T eval_node(const Node* n, const std::vector<T>& q) {
    switch (n->op) {
      case Op::num: return T(n->num);
      case Op::var: return q[n->var];
      case Op::neg: return -eval_node(n->a.get(), q);
      case Op::add: return eval_node(n->a.get(), q) + eval_node(n->b.get(), q);
      case Op::sub: return eval_node(n->a.get(), q) - eval_node(n->b.get(), q);
      case Op::mul: return eval_node(n->a.get(), q) * eval_node(n->b.get(), q);
      case Op::div: return eval_node(n->a.get(), q) / eval_node(n->b.get(), q);
      case Op::exp: return ad::exp(eval_node(n->a.get(), q));
      case Op::cos: return ad::cos(eval_node(n->a.get(), q));
      case Op::pow: {
        T base = eval_node(n->a.get(), q);
        if (n->b->op == Op::num && n->b->num == std::floor(n->b->num) && std::abs(n->b->num) <= 64) {
          long e = long(n->b->num);
          T r(1.0);
          for (long i = 0; i < std::abs(e); ++i) r = r * base;
          return e < 0 ? T(1.0) / r : r;
        }
        return ad::exp(eval_node(n->b.get(), q) * ad::log(base));
      }
    }
    return T(0.0);
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("potential.expr", "cannot parse '" + text_ + "' at " + std::to_string(pos_) + ": " + why);
  }
  void skip() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  static P make(Op op, P a = nullptr, P b = nullptr) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
  }

  P parse_sum() {
    P lhs = parse_product();
    for (;;) {
      if (eat('+')) lhs = make(Op::add, lhs, parse_product());
      else if (eat('-')) lhs = make(Op::sub, lhs, parse_product());
      else return lhs;
    }
  }
  P parse_product() {
    P lhs = parse_unary();
    for (;;) {
      if (eat('*')) lhs = make(Op::mul, lhs, parse_unary());
      else if (eat('/')) lhs = make(Op::div, lhs, parse_unary());
      else return lhs;
    }
  }
  P parse_unary() {
    if (eat('-')) return make(Op::neg, parse_unary());
    if (eat('+')) return parse_unary();
    return parse_power();
  }
  // right associative; binds tighter than unary minus on its left operand
  P parse_power() {
    P base = parse_atom();
    if (eat('^')) return make(Op::pow, base, parse_unary());
    return base;
  }
  P parse_atom() {
    skip();
    if (pos_ >= text_.size()) fail("unexpected end");
    char c = text_[pos_];
    if (eat('(')) {
      P e = parse_sum();
      if (!eat(')')) fail("missing ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      double x = std::stod(text_.substr(pos_), &used);
      pos_ += used;
      auto n = make(Op::num);
      n->num = x;
      return n;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      std::string id = text_.substr(start, pos_ - start);
      if (id == "exp" || id == "cos") {
        if (!eat('(')) fail("expected '(' after " + id);
        P arg = parse_sum();
        if (!eat(')')) fail("missing ')'");
        return make(id == "exp" ? Op::exp : Op::cos, arg);
      }
      if (id.size() > 1 && id[0] == 'q' && std::all_of(id.begin() + 1, id.end(), ::isdigit)) {
        int k = std::stoi(id.substr(1));
        if (k < 1 || k > dim_) fail("variable " + id + " out of range");
        auto n = make(Op::var);
        n->var = k - 1;
        return n;
      }
      fail("unknown identifier " + id);
    }
    fail("unexpected character");
  }

  std::string text_;
  int dim_ = 0;
  std::size_t pos_ = 0;
  P root_;
};

}  // namespace cgbound
