#pragma once

#include "qtraj/expr.hpp"
#include "qtraj/field.hpp"
#include "qtraj/grid.hpp"
#include "qtraj/identities.hpp"
#include "qtraj/integrate.hpp"
#include "qtraj/linalg.hpp"
#include "qtraj/log.hpp"
#include "qtraj/model.hpp"
#include "qtraj/noise.hpp"
#include "qtraj/observe.hpp"
#include "qtraj/oracle.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/presets.hpp"
#include "qtraj/experiment.hpp"
