// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace kopt {

// Base of every typed failure raised by the library. The CLI prints
// class_name() so callers can tell error classes apart without parsing text.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* class_name() const noexcept { return "Error"; }
};

#define KOPT_DEFINE_ERROR(Name, Base)                                   \
  class Name : public Base {                                            \
   public:                                                              \
    using Base::Base;                                                   \
    const char* class_name() const noexcept override { return #Name; } \
  }

KOPT_DEFINE_ERROR(UsageError, Error);
KOPT_DEFINE_ERROR(LoadError, Error);
KOPT_DEFINE_ERROR(LookupError, Error);
KOPT_DEFINE_ERROR(RegistrationError, Error);
KOPT_DEFINE_ERROR(SpecError, Error);
KOPT_DEFINE_ERROR(FormulaError, SpecError);
KOPT_DEFINE_ERROR(MetricError, Error);
KOPT_DEFINE_ERROR(CsvError, Error);
KOPT_DEFINE_ERROR(HardwareError, Error);
KOPT_DEFINE_ERROR(ParseError, Error);

// Anything that went wrong talking to the execution runner, as opposed to a
// kernel failing a check.
KOPT_DEFINE_ERROR(InfrastructureError, Error);
KOPT_DEFINE_ERROR(ScriptedMissError, InfrastructureError);

// The runner executed the kernel and the kernel itself failed (compile error,
// exception in forward). A property of the candidate, not of the transport.
KOPT_DEFINE_ERROR(KernelExecutionError, Error);

KOPT_DEFINE_ERROR(LlmError, Error);
KOPT_DEFINE_ERROR(AuthError, LlmError);
KOPT_DEFINE_ERROR(TimeoutError, LlmError);
KOPT_DEFINE_ERROR(ProviderError, LlmError);
KOPT_DEFINE_ERROR(ContextOverflowError, LlmError);
KOPT_DEFINE_ERROR(ScriptExhaustedError, LlmError);

KOPT_DEFINE_ERROR(TruncationExhaustedError, Error);

#undef KOPT_DEFINE_ERROR

}  // namespace kopt
