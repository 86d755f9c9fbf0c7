//PVSCL:IFCOND(Emailing)
export function sendByEmail (annotation) {
  const body = annotation.text;
  window.location.href = 'mailto:?body=' + encodeURIComponent(body);
}
//PVSCL:ENDCOND
