#pragma once

#include <stdexcept>
#include <string>

namespace divseg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
  using Error::Error;
};

// Image statistics requested on an (almost) all-black image.
struct DegenerateImage : Error {
  using Error::Error;
};

struct EmptyDataset : Error {
  using Error::Error;
};

struct EmptyRequest : Error {
  using Error::Error;
};

struct DepthRequired : Error {
  using Error::Error;
};

struct InvalidSpec : Error {
  using Error::Error;
};

struct InvalidSpectralTable : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct EmptyTarget : Error {
  using Error::Error;
};

struct SplitError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace divseg
