#pragma once

#include "brar/api.hpp"
#include "brar/binomial_rar.hpp"
#include "brar/error.hpp"
#include "brar/hypothesis.hpp"
#include "brar/inference.hpp"
#include "brar/mvn.hpp"
#include "brar/normal_rar.hpp"
#include "brar/numerics.hpp"
#include "brar/policies.hpp"
#include "brar/rng.hpp"
#include "brar/simulator.hpp"
#include "brar/trial.hpp"
