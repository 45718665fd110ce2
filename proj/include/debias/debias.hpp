#pragma once

#include "debias/error.hpp"
#include "debias/stats.hpp"
#include "debias/dataset.hpp"
#include "debias/objective.hpp"
#include "debias/optimizer.hpp"
#include "debias/selection.hpp"
#include "debias/simulator.hpp"
#include "debias/evaluation.hpp"
#include "debias/gradcheck.hpp"
