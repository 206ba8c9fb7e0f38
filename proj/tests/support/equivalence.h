#ifndef KPU_TESTS_EQUIVALENCE_H_
#define KPU_TESTS_EQUIVALENCE_H_

#include <string>
#include <string_view>

#include "kpu/oracle.h"
#include "kpu/pipeline.h"
#include "support/test_util.h"

namespace kpu::testing {

struct Equivalence {
  RunOutcome outcome;
  OracleState oracle;
  CompareReport report;
};

// Runs source on the pipelined engine and on the oracle, then compares the
// decrypted dump against the oracle state.
inline Equivalence check_equivalence(std::string_view src, EngineConfig cfg = test_engine_config()) {
  const Image img = assemble_or_die(src);
  Engine eng(img, test_codec(), cfg);
  Equivalence eq;
  eq.outcome = eng.run();
  const StateDump dump = parse_state_dump(write_state_dump(eng.mutable_state(), test_codec()));
  eq.oracle = interpret(img, test_codec());
  eq.report = compare(dump, test_codec(), eq.oracle);
  return eq;
}

}  // namespace kpu::testing

#endif  // KPU_TESTS_EQUIVALENCE_H_
