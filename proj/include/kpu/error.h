#ifndef KPU_ERROR_H_
#define KPU_ERROR_H_

#include <stdexcept>
#include <string>

namespace kpu {

// Base of every error the library raises. Subclasses name the failure so
// callers and tests can catch precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define KPU_DEFINE_ERROR(Name)    \
  class Name : public Error {     \
   public:                        \
    using Error::Error;           \
  }

KPU_DEFINE_ERROR(IllegalOpcode);
KPU_DEFINE_ERROR(OperandOutOfRange);
KPU_DEFINE_ERROR(NotAProgramAddress);
KPU_DEFINE_ERROR(PhysicalExhausted);
KPU_DEFINE_ERROR(UnalignedSupervisorAccess);
KPU_DEFINE_ERROR(OutOfRegion);
KPU_DEFINE_ERROR(UndefinedLabel);
KPU_DEFINE_ERROR(CryptoSafetyError);
KPU_DEFINE_ERROR(MaxCyclesExceeded);
KPU_DEFINE_ERROR(MaxStepsExceeded);
KPU_DEFINE_ERROR(ProgramFault);
KPU_DEFINE_ERROR(SimulationFault);
KPU_DEFINE_ERROR(AliasDetected);
KPU_DEFINE_ERROR(ConfigError);

#undef KPU_DEFINE_ERROR

// A user-mode immediate instruction reached decode without both prefixes.
class MissingPrefix : public IllegalOpcode {
 public:
  using IllegalOpcode::IllegalOpcode;
};

// Errors tied to a source or image line.
class LineError : public Error {
 public:
  LineError(int line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class ParseError : public LineError {
 public:
  using LineError::LineError;
};

class FormatError : public LineError {
 public:
  using LineError::LineError;
};

}  // namespace kpu

#endif  // KPU_ERROR_H_
