#pragma once

#include "qmkl/alignment.hpp"
#include "qmkl/dataprep.hpp"
#include "qmkl/diagnostics.hpp"
#include "qmkl/errors.hpp"
#include "qmkl/experiment.hpp"
#include "qmkl/feature_map.hpp"
#include "qmkl/kernels.hpp"
#include "qmkl/linalg.hpp"
#include "qmkl/matrix.hpp"
#include "qmkl/rng.hpp"
#include "qmkl/statevector.hpp"
#include "qmkl/svm.hpp"
