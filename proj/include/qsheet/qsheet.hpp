#ifndef QSHEET_QSHEET_HPP
#define QSHEET_QSHEET_HPP

#include "qsheet/splines.hpp"
#include "qsheet/constraint.hpp"
#include "qsheet/loss_exact.hpp"
#include "qsheet/loss_smoothed.hpp"
#include "qsheet/optim.hpp"
#include "qsheet/baselines.hpp"
#include "qsheet/simulation.hpp"
#include "qsheet/model.hpp"

#endif  // QSHEET_QSHEET_HPP
