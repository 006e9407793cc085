#pragma once

#include <stdexcept>
#include <string>

namespace pcde {

//! Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! A point or argument lies outside the domain of an operation.
class DomainError : public Error
{
public:
  using Error::Error;
};

//! A documented precondition of an operation was violated by the caller.
class ContractError : public Error
{
public:
  using Error::Error;
};

//! An enumeration or search exceeded its configured budget.
class ResourceError : public Error
{
public:
  using Error::Error;
};

//! Matrix factorization failed (non-SPD covariance and friends).
class LinearAlgebraError : public Error
{
public:
  using Error::Error;
};

//! EM produced a collapsed mixture component.
class DegenerateFitError : public Error
{
public:
  DegenerateFitError(const std::string& what, int component)
    : Error(what)
    , component_(component)
  {}
  int component() const { return component_; }

private:
  int component_;
};

//! Slope heuristic could not be fitted on the supplied model grid.
class CalibrationError : public Error
{
public:
  using Error::Error;
};

//! No admissible model survived the selection loop.
class SelectionError : public Error
{
public:
  using Error::Error;
};

//! A sampler could not draw from its target efficiently.
class SamplerError : public Error
{
public:
  using Error::Error;
};

//! Malformed or unreadable input data.
class DataError : public Error
{
public:
  using Error::Error;
};

} // namespace pcde
