#pragma once

#include <stdexcept>
#include <string>

namespace npx {

// Base for everything thrown by this project.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parse failures carry the file path and 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::string path, long line, const std::string& msg)
      : Error(path + ":" + std::to_string(line) + ": " + msg),
        path_(std::move(path)),
        line_(line) {}

  const std::string& path() const { return path_; }
  long line() const { return line_; }

 private:
  std::string path_;
  long line_;
};

class DuplicateKey : public ParseError {
 public:
  using ParseError::ParseError;
};

class MalformedValue : public ParseError {
 public:
  using ParseError::ParseError;
};

class MalformedLine : public ParseError {
 public:
  using ParseError::ParseError;
};

class InvalidInterval : public ParseError {
 public:
  using ParseError::ParseError;
};

class EmptyCohort : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class GroupEmpty : public Error {
 public:
  using Error::Error;
};

}  // namespace npx
