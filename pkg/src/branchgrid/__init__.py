"""Branching dueling Q-network scheduling of distributed batteries over a
branch-flow SOCP microgrid dispatch, with myopic and perfect-information
baselines."""

from .grid import (Bess, Branch, Bus, DeviceSet, ExogenousDay, Generator, Load,
                   NetworkTopology, ParseError, Renewable, ScenarioConfig,
                   SynthProfile, ValidationError, load_dataset, load_network,
                   synth_dataset, write_dataset, write_network)
from .cone import ConeProgram, NumericalFailure, ProgramBuilder, dump_program, solve_cone
from .opf import (OpfInstance, OpfSolution, build_multiperiod_relaxation,
                  build_opf, check_exactness, solve_multiperiod, solve_opf)
from .env import ActionSpace, EnvState, MicrogridEnv, StepOutcome
from .agent import (AgentConfig, BdqNetwork, TargetNetwork, loss_and_grads,
                    output_count, q_values, select_action, td_targets)
from .replay import ReplayBuffer, ReplayConfig, SumTree, Transition, Underfilled
from .trainer import TrainConfig, TrainLog, evaluate, improvement_vs_myopic, train
from .baselines import (GreedyQPolicy, MyopicPolicy, RandomPolicy, dp_oracle,
                        myopic_decide, random_policy, relaxed_oracle, rollout)

__version__ = "0.1.0"
