#include <stdio.h>
#include <string.h>

#include "fedgen.h"

int main(void) {
    const char *config = "n = 1\nK = 2\nR = 1\nd = 1\ndist = finite\nsupport = 0;1\neta = 0.5\nM = 50\n";
    FedgenSpec *spec = NULL;
    if (fedgen_spec_parse(config, &spec) != FEDGEN_STATUS_OK) {
        fprintf(stderr, "parse: %s\n", fedgen_last_error());
        return 1;
    }
    FedgenTable *table = NULL;
    if (fedgen_sweep_run(spec, &table) != FEDGEN_STATUS_OK) {
        fprintf(stderr, "sweep: %s\n", fedgen_last_error());
        return 1;
    }
    FedgenRow row;
    if (fedgen_table_row_count(table) != 1 || fedgen_table_row(table, 0, &row) != FEDGEN_STATUS_OK) {
        return 1;
    }
    char *csv = NULL;
    if (fedgen_table_to_csv(table, &csv) != FEDGEN_STATUS_OK || strncmp(csv, "R,gen_mean", 10) != 0) {
        return 1;
    }
    double b = 0.0;
    fedgen_b_coefficient(0.01, 2.0, 5, 2, 1, &b);
    printf("version=%s rounds=%zu term2=%.1f b2=%.9f\n", fedgen_version(), row.rounds, row.bound_term2, b);
    fedgen_string_free(csv);
    fedgen_table_free(table);
    fedgen_spec_free(spec);
    return 0;
}
