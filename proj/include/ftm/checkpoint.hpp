#pragma once

#include <Eigen/Dense>
#include <sstream>
#include <string>
#include <vector>

#include "ftm/lrnn.hpp"

namespace ftm {

// Tensor record: "T <name> <size>" followed by one line of row-major values
// printed with 17 significant digits, which round-trips doubles exactly.
void append_tensor(std::string& out, const std::string& name,
                   const Eigen::Ref<const Eigen::VectorXd>& values);

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& text) : in_(text) {}

  bool at_end();
  std::vector<std::string> next_record();
  Eigen::VectorXd read_tensor(const std::string& expected_name);
  LrnnParams read_lrnn_block();
  int line() const { return line_; }

 private:
  bool fill();

  std::istringstream in_;
  std::string pending_;
  bool has_pending_ = false;
  int line_ = 0;
};

}  // namespace ftm
