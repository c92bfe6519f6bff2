#pragma once

#include <stdexcept>
#include <string>

namespace kpt3d {

struct Error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

// Parallel rays, coincident camera centers or a point at infinity.
struct DegenerateGeometry : Error
{
  using Error::Error;
};

struct InvalidDepth : Error
{
  using Error::Error;
};

struct MissingAssociation : Error
{
  using Error::Error;
};

struct NoDepth : Error
{
  using Error::Error;
};

struct ShapeMismatch : Error
{
  using Error::Error;
};

// Malformed or unsupported file content.
struct FormatError : Error
{
  using Error::Error;
};

struct NotFound : Error
{
  using Error::Error;
};

}  // namespace kpt3d
