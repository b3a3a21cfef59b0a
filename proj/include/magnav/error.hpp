#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace magnav {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class OutOfMapError : public Error {
 public:
  OutOfMapError(double x, double y)
      : Error("query (" + std::to_string(x) + ", " + std::to_string(y) +
              ") lies outside the map extent"),
        x_(x),
        y_(y) {}

  double x() const { return x_; }
  double y() const { return y_; }

 private:
  double x_;
  double y_;
};

// Malformed text input. line() is 1-based; 0 means "whole file".
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class RankDeficientError : public Error {
 public:
  RankDeficientError(std::size_t rank, std::size_t columns)
      : Error("regressor matrix is rank deficient (numerical rank " +
              std::to_string(rank) + " of " + std::to_string(columns) + ")"),
        rank_(rank) {}

  std::size_t rank() const { return rank_; }

 private:
  std::size_t rank_;
};

class WeightCollapseError : public Error {
 public:
  using Error::Error;
};

// Entropy estimate hit a zero predictive density (log of zero).
class DegenerateEntropyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace magnav
