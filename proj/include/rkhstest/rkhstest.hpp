#pragma once

#include "rkhstest/estimator.hpp"
#include "rkhstest/hypothesis.hpp"
#include "rkhstest/kernel.hpp"
#include "rkhstest/linalg.hpp"
#include "rkhstest/loss.hpp"
#include "rkhstest/simulation.hpp"
#include "rkhstest/types.hpp"
