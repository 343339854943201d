#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "lfi/rng.hpp"

namespace lfi {

// Rectangular grid of colored cells plus one start ('S') and one goal ('G').
// Colors are the digits '0'..'4'; stepping onto a colored cell yields the
// reward assigned to its color, stepping onto the goal yields +100 and ends
// the episode, and the start cell is neutral (reward 0).
class GridWorld {
 public:
  static constexpr int kNumColors = 5;
  static constexpr double kGoalReward = 100.0;
  static constexpr int kStartCell = -1;
  static constexpr int kGoalCell = -2;

  // Parses an ASCII map: one row per line, characters 'S', 'G', '0'..'4'.
  static GridWorld parse(const std::string& ascii);
  static GridWorld load(const std::filesystem::path& path);

  // The bundled 13x13 benchmark map.
  static const GridWorld& default_map();
  static const char* default_map_ascii();

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int states() const { return rows_ * cols_; }
  int start_state() const { return start_; }
  int goal_state() const { return goal_; }

  // Cell content: 0..4 for colors, kStartCell, or kGoalCell.
  int cell(int state) const { return cells_[static_cast<std::size_t>(state)]; }

  // Reward for landing on `state` under the given per-color rewards.
  double reward(int state, const Eigen::VectorXd& color_rewards) const;

  // Deterministic move: actions 0=up, 1=down, 2=left, 3=right; moves that
  // would leave the grid keep the agent in place.
  int step(int state, int action) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  int start_ = -1;
  int goal_ = -1;
  std::vector<int> cells_;
};

struct TrajectorySummary {
  int turns = 0;
  int steps = 0;
  double reward = 0.0;
};

struct QLearningOptions {
  double alpha = 0.1;
  double gamma = 0.95;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int episodes = 2000;
  int step_cap = 500;
};

// Tabular action values over grid states.
struct QAgent {
  Eigen::MatrixXd q;  // states x 4

  // Highest-value action, ties broken toward the lowest action index.
  int greedy_action(int state) const;
};

// Tabular Q-learning in the deterministic world (no slip). Exploration is
// epsilon-greedy with epsilon decaying linearly from epsilon_start to
// epsilon_end across episodes; every episode starts at the start cell and
// ends at the goal or after step_cap steps.
QAgent nw_train_agent(const GridWorld& world, const Eigen::VectorXd& rewards,
                      const QLearningOptions& opts, RngStream& rng);

// One greedy rollout under the given slip probability: with probability
// `slip` the executed action is replaced by a uniformly random one. The
// summary counts executed-action changes as turns, total steps, and the
// accumulated reward; rollouts that hit step_cap truncate.
TrajectorySummary nw_rollout(const GridWorld& world,
                             const Eigen::VectorXd& rewards,
                             const QAgent& agent, double slip, int step_cap,
                             RngStream& rng);

struct NwOptions {
  QLearningOptions training;
  double rollout_slip = 0.1;
  int trajectories = 5;
  std::string map_path;  // empty -> bundled default map
};

// Full simulator pass: deterministic training followed by `trajectories`
// slippery greedy rollouts. Returns the per-trajectory (turns, steps, reward)
// triples sorted by reward and concatenated.
Eigen::VectorXd nw_simulate(const GridWorld& world,
                            const Eigen::VectorXd& rewards,
                            const NwOptions& opts, RngStream& rng);

}  // namespace lfi
