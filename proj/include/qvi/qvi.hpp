#pragma once

#include <qvi/cli.hpp>
#include <qvi/config.hpp>
#include <qvi/error.hpp>
#include <qvi/expr.hpp>
#include <qvi/fixedpoint.hpp>
#include <qvi/grid.hpp>
#include <qvi/model.hpp>
#include <qvi/montecarlo.hpp>
#include <qvi/operators.hpp>
#include <qvi/solver.hpp>
#include <qvi/validate.hpp>
