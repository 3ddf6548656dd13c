#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace touchformer {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string to_string(const Shape& shape);

enum class ErrorKind {
    Shape,
    Domain,
    Validation,
    Format,
    Io,
    Numerical,
};

// Base for every error the library raises. `kind()` lets callers (the CLI in
// particular) map failures onto exit codes without string matching.
class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

class ShapeError : public Error {
   public:
    ShapeError(const std::string& op, Shape lhs, Shape rhs)
        : Error(ErrorKind::Shape,
                op + ": incompatible shapes " + to_string(lhs) + " and " + to_string(rhs)),
          op_(op),
          lhs_(std::move(lhs)),
          rhs_(std::move(rhs)) {}

    ShapeError(const std::string& op, const std::string& detail)
        : Error(ErrorKind::Shape, op + ": " + detail), op_(op) {}

    const std::string& op() const noexcept { return op_; }
    const Shape& lhs() const noexcept { return lhs_; }
    const Shape& rhs() const noexcept { return rhs_; }

   private:
    std::string op_;
    Shape lhs_;
    Shape rhs_;
};

class DomainError : public Error {
   public:
    explicit DomainError(const std::string& what) : Error(ErrorKind::Domain, what) {}
};

class ValidationError : public Error {
   public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

// Malformed file contents. `path()` names the offending file.
class FormatError : public Error {
   public:
    FormatError(std::string path, const std::string& detail)
        : Error(ErrorKind::Format, path + ": " + detail), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

   private:
    std::string path_;
};

class IoError : public Error {
   public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class NumericalError : public Error {
   public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

inline std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

}  // namespace touchformer
