#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "explore_prob/mdp.hpp"

namespace explore_prob {

/// Hazard value meaning "back to s1" (the paper's H = infinity).
inline constexpr int kResetHazard = -1;

enum class Productivity { SelfLoop, Reset };

/// Action indices in chain MDPs.
inline constexpr ActionIndex kForward = 0;   ///< a+; the goal action at the last state
inline constexpr ActionIndex kBackward = 1;  ///< a-

/// Chain positions are 1-based in the analytic API (s1..sn) and map to state
/// index i-1 in the built MDP.
struct ChainSpec {
  int n = 2;
  std::vector<double> forward_p;   ///< p_1..p_{n-1}
  std::vector<int> hazard;         ///< H_1..H_n; positive depth or kResetHazard
  Productivity productivity = Productivity::SelfLoop;
  std::vector<double> backward_p;  ///< success probability of a- per state
  double r_G = 1.0;
  double r_D = 0.001;
  double gamma = 0.998;
};

void validate_chain_spec(const ChainSpec& spec);

/// Spec for one of the four prototypes. hazard must be 1 or kResetHazard.
ChainSpec make_prototype_spec(int hazard, Productivity g, int n, std::vector<double> forward_p, double r_G,
                              double r_D, double gamma);
ChainSpec make_prototype_spec(int hazard, Productivity g, int n, double p, double r_G, double r_D,
                              double gamma);

/// State reached by a successful a- at 1-based position i.
int backward_target(const ChainSpec& spec, int i);

FiniteMdp build_general_chain(const ChainSpec& spec);

FiniteMdp build_prototype(int hazard, Productivity g, int n, const std::vector<double>& forward_p, double r_G,
                          double r_D, double gamma);

/// pi^{-+}_k: a- on s1..sk, a+ on s_{k+1}..s_n.
Policy pbf_policy(int k, const ChainSpec& spec);

/// Short tag such as "H1_G1" or "Hinf_Greset".
std::string prototype_label(int hazard, Productivity g);

enum class Cell { Open, Blocked, Trap, Start, Goal };

struct MazeSpec {
  std::vector<std::vector<Cell>> grid;  ///< grid[row][col], row 0 at the top
  double move_p = 0.5;
  double r_G = 1.0;
  double gamma = 0.998;
};

/// The 5x5 maze with the blocked column, two traps, start and goal.
MazeSpec standard_maze(double move_p = 0.5, double r_G = 1.0, double gamma = 0.998);

/// Parses rows of characters: '.' open, '#' blocked, 'T' trap, 'S' start, 'G' goal.
MazeSpec maze_from_rows(const std::vector<std::string>& rows, double move_p, double r_G, double gamma);

enum MazeAction : ActionIndex { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kCollect = 4 };

struct MazePair {
  FiniteMdp mdp;
  ChainSpec chain;
  std::vector<std::pair<int, int>> cells;  ///< (row, col) of each MDP state
  std::vector<StateIndex> path;            ///< chain states s1..sn as MDP state indices
};

/// The 2D maze MDP (4 moves, plus collect at the goal) and its chain
/// abstraction. Path cells come first in state order, so the start is state 0
/// and the goal is state path.size()-1.
MazePair build_maze_pair(const MazeSpec& maze);

void to_json(nlohmann::json& j, const ChainSpec& spec);
void from_json(const nlohmann::json& j, ChainSpec& spec);

}  // namespace explore_prob
