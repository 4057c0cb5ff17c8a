#pragma once

#include <stdexcept>
#include <string>

namespace adderkernel {

// Feature and weight carry different fixed-point formats where the adder
// kernel requires one shared scale. In hardware this would need a point
// alignment shift before every subtraction.
class FormatMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Accumulator or datapath value does not fit its declared bit width.
class WidthOverflowError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Training produced a non-finite loss or parameter.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace adderkernel
