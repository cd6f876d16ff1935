import pathlib
from typing import List, Sequence

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill

# fill of the confusion cells that the matching pairs up
MATCHED_COLOR = 'c6efce'


def _sheet(wb: Workbook, label: str):
    # check if adding to existing workbook
    # if not, rename first sheet
    if wb.sheetnames[0] == 'Sheet':
        ws = wb['Sheet']
        ws.title = label
    else:
        ws = wb.create_sheet(label)
    return ws


def add_table(wb: Workbook, label: str, headers: Sequence[str], rows: Sequence[Sequence]):
    """
    Adds a table to the Excel Workbook as a new sheet
    :param wb: Excel Workbook
    :param label: Name of the new sheet
    :param headers: column headers
    :param rows: cell values, row by row
    :return: the worksheet
    """
    ws = _sheet(wb, label)

    # add headers
    for column, header in enumerate(headers):
        cell = ws.cell(row=1, column=column + 1, value=header)
        cell.alignment = Alignment(horizontal='center')
        cell.font = Font(bold=True)

    # add content
    for row, values in enumerate(rows):
        for column, value in enumerate(values):
            cell = ws.cell(row=row + 2, column=column + 1, value='' if value is None else value)
            cell.alignment = Alignment(horizontal='center')
    return ws


def export_report(report, path, spec=None):
    """
    Writes an EvalReport as a workbook with a Summary and a Confusion sheet
    :param report: Evaluation.EvalReport
    :param path: .xlsx destination
    :param spec: DatasetSpec, used to name the class ids
    """
    wb = Workbook()
    summary = [('acr', report.acr),
               ('acc', report.acc),
               ('silhouette', report.silhouette),
               ('labeled test examples', report.n_labeled),
               ('unlabeled test examples', report.n_unlabeled)]
    summary += [('acc view {}'.format(view), value) for view, value in sorted(report.acc_by_view.items())]
    summary += [('head {} -> class {}'.format(head, classId), '') for head, classId in sorted(report.permutation.items())]
    add_table(wb, 'Summary', ['Metric', 'Value'], summary)

    size = len(report.confusion)
    names = ['{}{}'.format('L' if spec is None or classId < spec.L else 'U', classId) for classId in range(size)]
    rows = [[names[truth]] + [int(count) for count in report.confusion[truth]] for truth in range(size)]
    ws = add_table(wb, 'Confusion', ['truth \\ predicted'] + names, rows)

    # highlight the labeled diagonal and the matched unlabeled cells
    matched = {(classId, classId) for classId in range(size) if spec is None or classId < spec.L}
    matched |= {(classId, head) for head, classId in report.permutation.items()}
    for truth, predicted in matched:
        ws.cell(row=truth + 2, column=predicted + 2).fill = PatternFill(fgColor=MATCHED_COLOR, fill_type='solid')

    wb.save(filename=str(pathlib.Path(path)))


def export_ablation(summary: List[dict], path):
    """
    Writes an ablation sweep as a workbook: one Summary row per ablation row and one Runs row per seed
    :param summary: dicts with row, losses, mean_acr, mean_acc, mean_silhouette and runs
                    (each run a dict with seed, acr, acc, silhouette)
    :param path: .xlsx destination
    """
    wb = Workbook()
    add_table(wb, 'Summary', ['Row', 'Losses', 'Mean ACR', 'Mean ACC', 'Mean SC', 'Seeds'],
              [[entry['row'], ','.join(entry['losses']), entry['mean_acr'], entry['mean_acc'],
                entry['mean_silhouette'], len(entry['runs'])] for entry in summary])
    add_table(wb, 'Runs', ['Row', 'Seed', 'ACR', 'ACC', 'SC'],
              [[entry['row'], run['seed'], run['acr'], run['acc'], run['silhouette']]
               for entry in summary for run in entry['runs']])
    wb.save(filename=str(pathlib.Path(path)))
